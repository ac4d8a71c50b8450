use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use linkgp::analysis::{
    covariance_profile_report, dirichlet_sweep_report, DEFAULT_DIRICHLET_SAMPLES,
};
use linkgp::data::{dataset_stats, read_edge_list, read_features, split_dataset, SplitManifest};
use linkgp::inducing::default_inducing_sizes;
use linkgp::metrics::EvaluationReport;
use linkgp::svgp::{gradient_check, score_pairs, train};
use linkgp::{
    Checkpoint, Convolution, ErrorKind, Features, GraphDomain, Inducing, Kernel, LinkDataset,
    LinkScoring, Model, NodeIds, TrainingConfig,
};

#[derive(Parser)]
#[command(
    name = "linkgp",
    version,
    about = "Graph-convolutional Gaussian processes for link prediction"
)]
struct Cli {
    /// Seed for splitting, inducing-graph sampling, sampling and minibatch order.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Edge list, two node tokens per line.
    #[arg(long, global = true)]
    edges: Option<PathBuf>,
    /// Node features, a token followed by its feature values per line.
    #[arg(long, global = true)]
    features: Option<PathBuf>,
    /// Model checkpoint (written by `train`, read by the other commands).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Node count, edge count and average degree.
    Stats,
    /// Hold out test edges and sample negatives; writes a split manifest.
    Split(SplitArgs),
    /// Fit a model and write a checkpoint.
    Train(TrainArgs),
    /// Score the test pairs as CSV.
    Predict(PredictArgs),
    /// AUC and AP on the test pairs as JSON.
    Evaluate(PredictArgs),
    /// Mean prior covariance against geodesic distance for a range of K.
    AnalyzeCovariance(CovarianceArgs),
    /// Mean Dirichlet norm of prior samples for a range of K.
    AnalyzeDirichlet(DirichletArgs),
    /// Compare analytic ELBO gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SplitSource {
    /// Split manifest from `split`; otherwise the split is recomputed from `--seed`.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: SplitSource,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 250)]
    max_epochs: usize,
    /// Window for the early-stopping test; 0 disables it.
    #[arg(long, default_value_t = 20)]
    patience_epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    elbo_tolerance: f64,
    #[arg(long, default_value_t = 20)]
    quadrature_points: usize,
    /// Number of convolutions.
    #[arg(long = "K")]
    depth: Option<usize>,
    /// Initial convolution weights, comma separated (default 0.5,0.3).
    #[arg(long, value_delimiter = ',')]
    lambda_init: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0)]
    lengthscale_init: f64,
    #[arg(long, default_value_t = 1.0)]
    variance_init: f64,
    /// Inducing graph size; by default half the nodes.
    #[arg(long)]
    inducing_nodes: Option<usize>,
    /// Inducing edges; by default twice the inducing nodes.
    #[arg(long)]
    inducing_edges: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scoring {
    Probability,
    Latent,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    source: SplitSource,
    #[arg(long, value_enum, default_value_t = Scoring::Probability)]
    scoring: Scoring,
}

#[derive(Args)]
struct CovarianceArgs {
    /// Centre node token; defaults to a node of maximum degree.
    #[arg(long)]
    center: Option<String>,
    #[arg(long, default_value_t = 9)]
    k_max: usize,
    #[arg(long, default_value_t = 5)]
    max_distance: usize,
}

#[derive(Args)]
struct DirichletArgs {
    #[arg(long, default_value_t = 9)]
    k_max: usize,
    #[arg(long, default_value_t = DEFAULT_DIRICHLET_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = 1.0)]
    variance: f64,
    #[arg(long, default_value_t = 1.0)]
    lengthscale: f64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    source: SplitSource,
    /// Number of training pairs in the checked minibatch.
    #[arg(long, default_value_t = 32)]
    pairs: usize,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Exit with a numerical failure above this relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 20)]
    quadrature_points: usize,
}

enum Failure {
    Usage(String),
    Core(linkgp::Error),
}

impl From<linkgp::Error> for Failure {
    fn from(e: linkgp::Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Outcome<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Failure::Usage(format!("this command needs --{flag}")))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Outcome {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load_graph(cli: &Cli) -> Outcome<(NodeIds, GraphDomain)> {
    Ok(read_edge_list(required(&cli.edges, "edges")?)?)
}

fn load_features(cli: &Cli, ids: &NodeIds) -> Outcome<Features> {
    Ok(read_features(required(&cli.features, "features")?, ids)?)
}

fn resolve_split(
    cli: &Cli,
    source: &SplitSource,
    ids: &NodeIds,
    full: &GraphDomain,
) -> Outcome<LinkDataset> {
    match &source.split {
        Some(path) => {
            let manifest: SplitManifest = serde_json::from_str(&std::fs::read_to_string(path)?)
                .map_err(|e| {
                    Failure::Core(linkgp::Error::InvalidInput(format!(
                        "{}: {e}",
                        path.display()
                    )))
                })?;
            Ok(manifest.to_dataset(ids, full)?)
        }
        None => Ok(split_dataset(full, source.test_fraction, cli.seed)?),
    }
}

fn convolution_weights(depth: Option<usize>, init: &Option<Vec<f64>>) -> Outcome<Vec<f64>> {
    const DEFAULT: [f64; 2] = [0.5, 0.3];
    match (depth, init) {
        (None, None) => Ok(DEFAULT.to_vec()),
        (None, Some(w)) => Ok(w.clone()),
        (Some(k), None) => Ok((0..k).map(|i| DEFAULT[i.min(1)]).collect()),
        (Some(k), Some(w)) if w.len() == k => Ok(w.clone()),
        (Some(k), Some(w)) if w.len() == 1 => Ok(vec![w[0]; k]),
        (Some(k), Some(w)) => Err(Failure::Usage(format!(
            "--lambda-init has {} values but --K is {k}",
            w.len()
        ))),
    }
}

fn stats(cli: &Cli) -> Outcome {
    let (_, g) = load_graph(cli)?;
    let s = dataset_stats(&g);
    emit(
        &cli.out,
        &format!(
            "nodes: {}\nedges: {}\naverage degree: {:.2}\n",
            s.nodes, s.edges, s.average_degree
        ),
    )
}

fn split(cli: &Cli, args: &SplitArgs) -> Outcome {
    let (ids, g) = load_graph(cli)?;
    let dataset = split_dataset(&g, args.test_fraction, cli.seed)?;
    let manifest = SplitManifest::from_dataset(&ids, &dataset, cli.seed, args.test_fraction);
    let mut text = serde_json::to_string_pretty(&manifest).map_err(linkgp::Error::from)?;
    text.push('\n');
    emit(&cli.out, &text)
}

#[derive(Serialize)]
struct TrainSummary {
    epochs_run: usize,
    stopped_early: bool,
    elbo_final: Option<f64>,
    elbo_trace: Vec<f64>,
}

fn train_command(cli: &Cli, args: &TrainArgs) -> Outcome {
    let checkpoint_path = required(&cli.checkpoint, "checkpoint")?;
    let (ids, full) = load_graph(cli)?;
    let x = load_features(cli, &ids)?;
    let dataset = resolve_split(cli, &args.source, &ids, &full)?;
    let config = TrainingConfig {
        learning_rate: args.learning_rate,
        batch_size: args.batch_size,
        max_epochs: args.max_epochs,
        patience_epochs: args.patience_epochs,
        elbo_tolerance: args.elbo_tolerance,
        quadrature_points: args.quadrature_points,
        seed: cli.seed,
    };
    config
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;

    let weights = convolution_weights(args.depth, &args.lambda_init)?;
    let convolution =
        Convolution::from_weights(&weights).map_err(|e| Failure::Usage(e.to_string()))?;
    let kernel = Kernel::isotropic(args.variance_init, args.lengthscale_init, x.dim())
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let (default_nodes, default_edges) = default_inducing_sizes(&dataset.observed_graph);
    let n_nodes = args.inducing_nodes.unwrap_or(default_nodes);
    let n_edges = args
        .inducing_edges
        .unwrap_or(if args.inducing_nodes.is_some() {
            2 * n_nodes
        } else {
            default_edges
        });
    let inducing = Inducing::sample(&x, n_nodes, n_edges, cli.seed)?;
    let mut model = Model::new(convolution, kernel, inducing)?;

    let report = train(
        &mut model,
        &dataset.observed_graph,
        &x,
        &dataset.train,
        &config,
    )?;
    let checkpoint = Checkpoint::from_model(
        &model,
        &ids,
        &dataset.observed_graph,
        &config,
        report.final_elbo(),
        cli.seed,
    );
    checkpoint.save(checkpoint_path)?;
    eprintln!(
        "trained {} epochs{}, final ELBO {}",
        report.epochs_run(),
        if report.stopped_early {
            " (early stop)"
        } else {
            ""
        },
        report
            .final_elbo()
            .map_or("n/a".to_string(), |e| format!("{e:.4}"))
    );
    if cli.out.is_some() {
        let summary = TrainSummary {
            epochs_run: report.epochs_run(),
            stopped_early: report.stopped_early,
            elbo_final: report.final_elbo(),
            elbo_trace: report.elbo_trace.clone(),
        };
        let mut text = serde_json::to_string_pretty(&summary).map_err(linkgp::Error::from)?;
        text.push('\n');
        emit(&cli.out, &text)?;
    }
    Ok(())
}

struct Scored {
    checkpoint: Checkpoint,
    dataset: LinkDataset,
    ids: NodeIds,
    scores: Vec<f64>,
}

fn score_test_pairs(cli: &Cli, args: &PredictArgs) -> Outcome<Scored> {
    let checkpoint = Checkpoint::load(required(&cli.checkpoint, "checkpoint")?)?;
    let (ids, full) = load_graph(cli)?;
    if checkpoint.node_ids != ids.tokens() {
        return Err(Failure::Core(linkgp::Error::Checkpoint(
            "node tokens differ from the edge list".into(),
        )));
    }
    let x = load_features(cli, &ids)?;
    let dataset = resolve_split(cli, &args.source, &ids, &full)?;
    checkpoint.verify_graph(&dataset.observed_graph)?;
    let model: Model = checkpoint.to_model()?;
    let scoring = match args.scoring {
        Scoring::Probability => LinkScoring::Probability,
        Scoring::Latent => LinkScoring::Latent,
    };
    let scores = score_pairs(
        &model,
        &dataset.observed_graph,
        &x,
        &dataset.test_pairs(),
        checkpoint.training.batch_size,
        scoring,
        checkpoint.training.quadrature_points,
    )?;
    Ok(Scored {
        checkpoint,
        dataset,
        ids,
        scores,
    })
}

fn predict(cli: &Cli, args: &PredictArgs) -> Outcome {
    let s = score_test_pairs(cli, args)?;
    let mut text = String::from("source,target,label,score\n");
    for (p, score) in s.dataset.test.iter().zip(&s.scores) {
        writeln!(
            text,
            "{},{},{},{score}",
            s.ids.token(p.pair.first),
            s.ids.token(p.pair.second),
            u8::from(p.label)
        )
        .expect("writing to a String");
    }
    emit(&cli.out, &text)
}

fn evaluate(cli: &Cli, args: &PredictArgs) -> Outcome {
    let s = score_test_pairs(cli, args)?;
    let labels: Vec<bool> = s.dataset.test.iter().map(|p| p.label).collect();
    let report = EvaluationReport::new(
        &s.scores,
        &labels,
        s.checkpoint.final_elbo,
        s.checkpoint.seed,
    )?;
    emit(&cli.out, &report.to_json()?)
}

fn analyze_covariance(cli: &Cli, args: &CovarianceArgs) -> Outcome {
    let (ids, g) = load_graph(cli)?;
    let x = load_features(cli, &ids)?;
    let center = match &args.center {
        Some(token) => ids
            .get(token)
            .ok_or_else(|| Failure::Usage(format!("unknown centre node `{token}`")))?,
        None => (0..g.node_count())
            .max_by_key(|&i| (g.degree(i), std::cmp::Reverse(i)))
            .unwrap_or(0),
    };
    let params = Kernel::isotropic(1.0, 1.0, x.dim())?;
    let depths: Vec<usize> = (0..=args.k_max).collect();
    let csv = covariance_profile_report(&g, &x, &params, center, &depths, args.max_distance)?;
    emit(&cli.out, &csv)
}

fn analyze_dirichlet(cli: &Cli, args: &DirichletArgs) -> Outcome {
    let (ids, g) = load_graph(cli)?;
    let x = load_features(cli, &ids)?;
    let params = Kernel::isotropic(args.variance, args.lengthscale, x.dim())
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let depths: Vec<usize> = (0..=args.k_max).collect();
    let csv = dirichlet_sweep_report(&g, &x, &params, &depths, args.samples, cli.seed)?;
    emit(&cli.out, &csv)
}

#[derive(Serialize)]
struct GradcheckSummary {
    max_relative_error: f64,
    groups: Vec<GroupError>,
}

#[derive(Serialize)]
struct GroupError {
    group: &'static str,
    max_relative_error: f64,
}

fn gradcheck(cli: &Cli, args: &GradcheckArgs) -> Outcome<bool> {
    let (ids, full) = load_graph(cli)?;
    let x = load_features(cli, &ids)?;
    let dataset = resolve_split(cli, &args.source, &ids, &full)?;
    let model: Model = match &cli.checkpoint {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            ckpt.verify_graph(&dataset.observed_graph)?;
            ckpt.to_model()?
        }
        None => {
            let (n, e) = default_inducing_sizes(&dataset.observed_graph);
            Model::new(
                Convolution::from_weights(&[0.5, 0.3])?,
                Kernel::isotropic(1.0, 1.0, x.dim())?,
                Inducing::sample(&x, n, e, cli.seed)?,
            )?
        }
    };
    let pairs = &dataset.train[..args.pairs.min(dataset.train.len())];
    let report = gradient_check(
        &model,
        &dataset.observed_graph,
        &x,
        pairs,
        dataset.train.len(),
        args.step,
        args.quadrature_points,
    )?;
    let summary = GradcheckSummary {
        max_relative_error: report.max_relative_error,
        groups: report
            .per_group
            .iter()
            .map(|&(g, e)| GroupError {
                group: g.name(),
                max_relative_error: e,
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&summary).map_err(linkgp::Error::from)?;
    text.push('\n');
    emit(&cli.out, &text)?;
    Ok(report.max_relative_error <= args.tolerance)
}

fn run(cli: &Cli) -> Outcome<ExitCode> {
    match &cli.command {
        Command::Stats => stats(cli)?,
        Command::Split(args) => split(cli, args)?,
        Command::Train(args) => train_command(cli, args)?,
        Command::Predict(args) => predict(cli, args)?,
        Command::Evaluate(args) => evaluate(cli, args)?,
        Command::AnalyzeCovariance(args) => analyze_covariance(cli, args)?,
        Command::AnalyzeDirichlet(args) => analyze_dirichlet(cli, args)?,
        Command::Gradcheck(args) => {
            if !gradcheck(cli, args)? {
                eprintln!(
                    "error: gradient check exceeded tolerance {}",
                    args.tolerance
                );
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            match e.kind() {
                ErrorKind::Data => ExitCode::from(2),
                ErrorKind::Numerical => ExitCode::from(3),
            }
        }
    }
}
