//! The `emr` command-line interface: train, propagate, oracles,
//! gen-sbm, and inspect subcommands over the library.
//!
//! Exit codes: 0 success, 1 usage or validation failure, 2 numerical
//! failure.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::save_checkpoint;
use crate::coefficients::{emda_solve, qp_oracle, CoefficientVector, RclSettings};
use crate::config::{DataSource, PropagationKind, RunConfig};
use crate::data::{generate_sbm, load_dataset, write_dataset, Dataset};
use crate::enmp::{
    closed_form_solve, enmp_layer, ppr_matrix, propagate, CoefficientMode, EnmpHyper,
};
use crate::error::{EmrError, Result};
use crate::graph::{normalize, NormalizedRelation};
use crate::model::{
    backward, evaluate, forward_eval, loss, parameter_count, rgcn_style_count, train,
    DropoutPosition, ModelParams, ModelSettings, Propagation, Transform,
};
use crate::report::{ResultSummary, RunReport};
use crate::FeatureMatrix;

#[derive(Parser)]
#[command(
    name = "emr",
    about = "Ensemble multi-relational graph learning",
    version,
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the classifier and report test metrics.
    Train(TrainArgs),
    /// Run propagation only and print the per-layer coefficients.
    Propagate(PropagateArgs),
    /// Run the built-in numerical self-checks and print a pass/fail table.
    Oracles(OraclesArgs),
    /// Sample a block-model dataset and write it to a directory.
    GenSbm(GenSbmArgs),
    /// Summarize a dataset manifest.
    Inspect(InspectArgs),
}

/// Options shared by every config-driven subcommand. Precedence:
/// config file, then --data, then --seed, then --set (last wins).
#[derive(Args)]
struct SharedArgs {
    /// Config file (sectioned `key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest (shorthand for --set data.manifest=PATH).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Seed for both data generation and training.
    #[arg(long)]
    seed: Option<u64>,
    /// Override one key, e.g. --set hyper.lambda1=4 (repeatable).
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    shared: SharedArgs,
    /// Write the run report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Save the best-validation weights here.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct PropagateArgs {
    #[command(flatten)]
    shared: SharedArgs,
    /// Verify the propagated features against the closed-form solution
    /// at the final coefficients (tolerance 1e-8).
    #[arg(long)]
    check_closed_form: bool,
}

#[derive(Args)]
struct OraclesArgs {
    /// Deliberately corrupt the λ₁-to-teleport mapping so the PageRank
    /// equivalence check fails; proves the table can go red.
    #[arg(long)]
    corrupt_lambda_map: bool,
}

#[derive(Args)]
struct GenSbmArgs {
    #[command(flatten)]
    shared: SharedArgs,
    /// Directory to write the dataset into.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    /// Dataset manifest to summarize.
    #[arg(long)]
    data: PathBuf,
}

/// Parse arguments, dispatch, and translate errors into exit codes.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version are successful exits.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Propagate(args) => cmd_propagate(args),
        Command::Oracles(args) => cmd_oracles(args),
        Command::GenSbm(args) => cmd_gen_sbm(args),
        Command::Inspect(args) => cmd_inspect(args),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn build_config(shared: &SharedArgs) -> Result<RunConfig> {
    let mut config = match &shared.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(path) = &shared.data {
        config.data = DataSource::Manifest(path.clone());
    }
    if let Some(seed) = shared.seed {
        config.seed = seed;
        if let DataSource::Sbm(spec) = &mut config.data {
            spec.seed = seed;
        }
    }
    for spec in &shared.set {
        config.apply_set(spec)?;
    }
    Ok(config)
}

fn load_configured_dataset(config: &RunConfig) -> Result<Dataset> {
    match &config.data {
        DataSource::Manifest(path) => load_dataset(path),
        DataSource::Sbm(spec) => generate_sbm(spec),
    }
}

/// Resolve the propagation's relation set: everything for ensemble and
/// stack runs, one relation for `single:<name-or-index>`.
fn resolve_relations(
    dataset: &Dataset,
    propagation: &PropagationKind,
) -> Result<Vec<NormalizedRelation>> {
    match propagation {
        PropagationKind::Enmp | PropagationKind::Stack => Ok(normalize(&dataset.graph)),
        PropagationKind::Single(selector) => {
            let names = dataset.graph.relation_names();
            let index = match selector.parse::<usize>() {
                Ok(i) => i,
                Err(_) => names.iter().position(|n| n == selector).ok_or_else(|| {
                    EmrError::invalid(format!(
                        "no relation named `{selector}`; dataset has: {}",
                        names.join(", ")
                    ))
                })?,
            };
            if index >= names.len() {
                return Err(EmrError::invalid(format!(
                    "relation index {index} out of range; dataset has {} relations",
                    names.len()
                )));
            }
            Ok(normalize(&dataset.graph.single_relation(index)))
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut config = build_config(&args.shared)?;
    if let Some(path) = args.report {
        config.report_path = Some(path);
    }
    if let Some(path) = args.checkpoint {
        config.checkpoint_path = Some(path);
    }

    let started = Instant::now();
    let dataset = load_configured_dataset(&config)?;
    let rels = resolve_relations(&dataset, &config.propagation)?;
    let load_seconds = started.elapsed().as_secs_f64();

    let train_config = config.train_config(dataset.featureless);
    let train_started = Instant::now();
    let outcome = train(
        &dataset.features,
        &rels,
        &dataset.labels,
        &dataset.splits,
        &train_config,
    )?;
    let train_seconds = train_started.elapsed().as_secs_f64();

    let eval = forward_eval(&dataset.features, &rels, &outcome.params, &train_config.settings)?;
    let test = evaluate(&eval.logits, &dataset.labels, &dataset.splits.test)?;
    let coefficients = outcome
        .trace
        .as_ref()
        .map(|trace| trace.mu_per_layer().to_vec())
        .unwrap_or_default();

    let report = RunReport {
        config_text: config.render(),
        dataset_name: dataset.name.clone(),
        epochs: outcome.history.clone(),
        result: ResultSummary {
            best_epoch: outcome.best_epoch,
            test: test.clone(),
            parameter_count: parameter_count(&outcome.params),
            rgcn_style_parameter_count: rgcn_style_count(
                rels.len(),
                config.layers,
                config.hidden_dim,
            ),
        },
        coefficients,
        timing: vec![
            ("load".to_string(), load_seconds),
            ("train".to_string(), train_seconds),
            ("total".to_string(), started.elapsed().as_secs_f64()),
        ],
    };

    let rendered = report.render();
    match &config.report_path {
        Some(path) => {
            std::fs::write(path, &rendered).map_err(|source| EmrError::Io {
                path: path.display().to_string(),
                source,
            })?;
            println!(
                "test accuracy {:.4}, macro recall {:.4}, best epoch {} -> report {}",
                test.accuracy,
                test.macro_recall,
                outcome.best_epoch,
                path.display()
            );
        }
        None => print!("{rendered}"),
    }
    if let Some(path) = &config.checkpoint_path {
        save_checkpoint(path, &outcome.params, &config.render())?;
        println!("checkpoint -> {}", path.display());
    }
    Ok(())
}

fn cmd_propagate(args: PropagateArgs) -> Result<()> {
    let config = build_config(&args.shared)?;
    let dataset = load_configured_dataset(&config)?;
    let rels = normalize(&dataset.graph);
    let hyper = config.enmp_hyper();
    let trace = propagate(&dataset.features, &rels, &hyper)?;

    println!("# per-layer coefficients over {} relations", rels.len());
    println!("layer,{}", dataset.graph.relation_names().join(","));
    for (layer, mu) in trace.mu_per_layer().iter().enumerate() {
        let weights: Vec<String> = mu.as_slice().iter().map(|w| format!("{w:.6}")).collect();
        println!("{},{}", layer + 1, weights.join(","));
    }

    if args.check_closed_form {
        let mu = trace.final_mu().clone();
        let z_star = closed_form_solve(&dataset.features, &rels, &mu, hyper.lambda1)?;
        let denom = z_star.norm().max(f64::MIN_POSITIVE);
        let fixed_hyper = EnmpHyper {
            coefficient_mode: CoefficientMode::Fixed(mu),
            k: 1,
            ..hyper.clone()
        };
        let mut z = dataset.features.clone();
        let mut deviation = (&z - &z_star).norm() / denom;
        let mut iterations = 0usize;
        const MAX_ITERATIONS: usize = 200_000;
        while deviation > 1e-8 {
            if iterations >= MAX_ITERATIONS {
                return Err(EmrError::numerical(format!(
                    "fixed-coefficient iteration stalled at deviation {deviation:.3e} \
                     after {iterations} steps (tolerance 1e-8)"
                )));
            }
            let (next, _) = enmp_layer(&z, &dataset.features, &rels, &fixed_hyper)?;
            z = next;
            iterations += 1;
            deviation = (&z - &z_star).norm() / denom;
        }
        println!(
            "closed_form_deviation = {deviation:.3e} after {iterations} iterations (tolerance 1e-8)"
        );
    }
    Ok(())
}

fn cmd_gen_sbm(args: GenSbmArgs) -> Result<()> {
    let config = build_config(&args.shared)?;
    let spec = match &config.data {
        DataSource::Sbm(spec) => spec.clone(),
        DataSource::Manifest(path) => {
            return Err(EmrError::invalid(format!(
                "gen-sbm needs a block-model data source, but data.manifest = {} is set",
                path.display()
            )))
        }
    };
    let dataset = generate_sbm(&spec)?;
    let manifest = write_dataset(&args.out, &dataset)?;
    println!("wrote {}", manifest.display());
    print_dataset_summary(&dataset);
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    let dataset = load_dataset(&args.data)?;
    print_dataset_summary(&dataset);
    Ok(())
}

fn print_dataset_summary(dataset: &Dataset) {
    println!("dataset {}", dataset.name);
    println!("nodes = {}", dataset.n());
    if dataset.featureless {
        println!("features = identity ({} columns, featureless)", dataset.features.ncols());
    } else {
        println!("features = {} columns", dataset.features.ncols());
    }
    println!("classes = {}", dataset.classes());
    let labeled = dataset.labels.iter().filter(|&&y| y >= 0).count();
    println!("labeled = {} ({} unlabeled)", labeled, dataset.n() - labeled);
    for (name, rel) in dataset
        .graph
        .relation_names()
        .iter()
        .zip(dataset.graph.relations())
    {
        println!("relation {} = {} edges", name, rel.nnz() / 2);
    }
    println!(
        "splits = {} train / {} val / {} test",
        dataset.splits.train.len(),
        dataset.splits.val.len(),
        dataset.splits.test.len()
    );
}

struct Check {
    name: &'static str,
    outcome: Result<String>,
}

fn cmd_oracles(args: OraclesArgs) -> Result<()> {
    let checks = vec![
        Check {
            name: "simplex_projection_known_case",
            outcome: check_projection_known_case(),
        },
        Check {
            name: "mirror_descent_matches_projection",
            outcome: check_mirror_descent_matches_projection(),
        },
        Check {
            name: "identity_relation_layer_halves",
            outcome: check_identity_layer(),
        },
        Check {
            name: "iteration_reaches_closed_form",
            outcome: check_iteration_reaches_closed_form(),
        },
        Check {
            name: "pagerank_equivalence",
            outcome: check_pagerank_equivalence(args.corrupt_lambda_map),
        },
        Check {
            name: "gradient_matches_finite_differences",
            outcome: check_gradient_finite_differences(),
        },
        Check {
            name: "layer_objective_descends",
            outcome: check_energy_descent(),
        },
        Check {
            name: "permutation_equivariance",
            outcome: check_permutation_equivariance(),
        },
    ];

    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut failures = 0usize;
    for check in &checks {
        match &check.outcome {
            Ok(detail) => println!("{:width$}  ok    {detail}", check.name),
            Err(err) => {
                failures += 1;
                println!("{:width$}  FAIL  {err}", check.name);
            }
        }
    }
    if failures > 0 {
        return Err(EmrError::invalid(format!(
            "{failures} of {} self-checks failed",
            checks.len()
        )));
    }
    println!("all {} self-checks passed", checks.len());
    Ok(())
}

/// A small random multi-relational graph plus features, fixed seed.
fn oracle_fixture(
    n: usize,
    r: usize,
    d: usize,
    seed: u64,
) -> Result<(Vec<NormalizedRelation>, FeatureMatrix)> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edge_lists = Vec::with_capacity(r);
    for _ in 0..r {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen::<f64>() < 0.15 {
                    edges.push((i, j));
                }
            }
        }
        edge_lists.push(edges);
    }
    let graph = crate::graph::build_graph(&edge_lists, n)?;
    let h = FeatureMatrix::from_fn(n, d, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
    Ok((normalize(&graph), h))
}

fn check_projection_known_case() -> Result<String> {
    // λ₁ = λ₂ = 1 shrinks scores [1, 2, 5] by half before projecting:
    // support {0, 1}, weights (1 ± 1/2)/2.
    let mu = qp_oracle(&[1.0, 2.0, 5.0], 1.0, 1.0)?;
    let expected = [0.75, 0.25, 0.0];
    let deviation = mu
        .as_slice()
        .iter()
        .zip(&expected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    if deviation > 1e-12 {
        return Err(EmrError::numerical(format!(
            "projection of scores [1,2,5] deviates from [3/4, 1/4, 0] by {deviation:.3e}"
        )));
    }
    Ok(format!("max deviation {deviation:.3e} (tol 1e-12)"))
}

fn check_mirror_descent_matches_projection() -> Result<String> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let settings = RclSettings {
        max_iters: 5000,
        tol: 1e-10,
        warm_start: false,
    };
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let r = rng.gen_range(2..6);
        let scores: Vec<f64> = (0..r).map(|_| rng.gen::<f64>() * 10.0 - 2.0).collect();
        let lambda1 = 0.5 + rng.gen::<f64>() * 4.0;
        let lambda2 = 0.1 + rng.gen::<f64>() * 5.0;
        let fast = emda_solve(&scores, lambda1, lambda2, &settings)?;
        let exact = qp_oracle(&scores, lambda1, lambda2)?;
        let deviation = fast
            .as_slice()
            .iter()
            .zip(exact.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        worst = worst.max(deviation);
    }
    if worst > 1e-3 {
        return Err(EmrError::numerical(format!(
            "mirror descent deviates from the projection oracle by {worst:.3e}"
        )));
    }
    Ok(format!("worst deviation {worst:.3e} over 10 cases (tol 1e-3)"))
}

fn check_identity_layer() -> Result<String> {
    let graph = crate::graph::build_graph(&[Vec::new()], 5)?;
    let rels = normalize(&graph);
    let h = FeatureMatrix::from_fn(5, 3, |i, j| (i * 3 + j) as f64 * 0.25 - 1.0);
    let z = FeatureMatrix::from_fn(5, 3, |i, j| ((i + j) as f64).sin());
    let hyper = EnmpHyper::uniform(1.0, 1);
    let (next, _) = enmp_layer(&z, &h, &rels, &hyper)?;
    let expected = (&h + &z) * 0.5;
    let deviation = (next - expected).norm();
    if deviation > 1e-12 {
        return Err(EmrError::numerical(format!(
            "identity-relation layer deviates from (H+Z)/2 by {deviation:.3e}"
        )));
    }
    Ok(format!("deviation {deviation:.3e} (tol 1e-12)"))
}

fn check_iteration_reaches_closed_form() -> Result<String> {
    let (rels, h) = oracle_fixture(40, 2, 3, 21)?;
    let mu = CoefficientVector::new(vec![0.7, 0.3])?;
    let lambda1 = 2.0;
    let z_star = closed_form_solve(&h, &rels, &mu, lambda1)?;
    let hyper = EnmpHyper {
        coefficient_mode: CoefficientMode::Fixed(mu),
        ..EnmpHyper::uniform(lambda1, 1)
    };
    let mut z = h.clone();
    for _ in 0..400 {
        let (next, _) = enmp_layer(&z, &h, &rels, &hyper)?;
        z = next;
    }
    let deviation = (z - &z_star).norm() / z_star.norm();
    if deviation > 1e-8 {
        return Err(EmrError::numerical(format!(
            "400 fixed-coefficient iterations still {deviation:.3e} from the closed form"
        )));
    }
    Ok(format!("relative deviation {deviation:.3e} (tol 1e-8)"))
}

fn check_pagerank_equivalence(corrupt: bool) -> Result<String> {
    let (rels, h) = oracle_fixture(30, 3, 4, 33)?;
    let mu = CoefficientVector::new(vec![0.5, 0.3, 0.2])?;
    let lambda1 = 3.0;
    let mut alpha: f64 = 1.0 / (1.0 + lambda1);
    if corrupt {
        // Deliberate mis-mapping: proves this table can fail.
        alpha = (alpha * 1.1).min(1.0);
    }
    let z_star = closed_form_solve(&h, &rels, &mu, lambda1)?;
    let pi = ppr_matrix(&rels, &mu, alpha)?;
    let deviation = (&pi * &h - &z_star).norm() / z_star.norm();
    if deviation > 1e-10 {
        return Err(EmrError::numerical(format!(
            "personalized-PageRank route deviates from the closed form by {deviation:.3e}"
        )));
    }
    Ok(format!("relative deviation {deviation:.3e} (tol 1e-10)"))
}

fn check_gradient_finite_differences() -> Result<String> {
    let (rels, x) = oracle_fixture(10, 2, 4, 55)?;
    let labels: Vec<i64> = (0..10).map(|i| (i % 3) as i64).collect();
    let mask: Vec<usize> = (0..10).collect();
    let settings = ModelSettings {
        propagation: Propagation::Enmp(EnmpHyper::uniform(1.5, 3)),
        dropout_rate: 0.0,
        dropout_position: DropoutPosition::Transform,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(56);
    let params = ModelParams::init(4, 3, 3, Transform::Relu, &mut rng)?;
    let out = forward_eval(&x, &rels, &params, &settings)?;
    let grads = backward(&out.cache, &rels, &labels, &mask)?;

    let h = 1e-5;
    let mut worst = 0.0f64;
    for (i, j) in [(0usize, 0usize), (1, 2), (3, 1)] {
        let perturb = |delta: f64| -> Result<f64> {
            let mut w = params.w().clone();
            w[(i, j)] += delta;
            let p = ModelParams::from_parts(
                w,
                params.b_w().clone(),
                params.theta().clone(),
                params.b_theta().clone(),
                params.transform(),
            )?;
            let out = forward_eval(&x, &rels, &p, &settings)?;
            loss(&out.logits, &labels, &mask)
        };
        let numeric = (perturb(h)? - perturb(-h)?) / (2.0 * h);
        worst = worst.max((numeric - grads.w[(i, j)]).abs());
    }
    if worst > 1e-4 {
        return Err(EmrError::numerical(format!(
            "analytic gradient deviates from central differences by {worst:.3e}"
        )));
    }
    Ok(format!("worst coordinate deviation {worst:.3e} (tol 1e-4)"))
}

fn check_energy_descent() -> Result<String> {
    use crate::coefficients::objective;
    use crate::graph::smoothness_score;
    let (rels, h) = oracle_fixture(25, 3, 4, 77)?;
    let hyper = EnmpHyper::learned(2.0, 1.0, 6);
    let trace = propagate(&h, &rels, &hyper)?;
    // Objective: ||Z-H||^2 + λ₁ Σ μ_r s_r(Z) + λ₂ ||μ||² must not
    // increase across layers (tolerance for rounding).
    let mut previous = f64::INFINITY;
    let mut worst_rise = 0.0f64;
    for (z, mu) in trace.z_per_layer()[1..].iter().zip(trace.mu_per_layer()) {
        let scores: Vec<f64> = rels
            .iter()
            .map(|rel| smoothness_score(rel, z))
            .collect::<Result<_>>()?;
        let fit = (z - &h).norm_squared();
        let value = fit + objective(&scores, hyper.lambda1, hyper.lambda2, mu);
        if value > previous {
            worst_rise = worst_rise.max(value - previous);
        }
        previous = value;
    }
    if worst_rise > 1e-9 {
        return Err(EmrError::numerical(format!(
            "layer objective rose by {worst_rise:.3e}"
        )));
    }
    Ok(format!("worst rise {worst_rise:.3e} (tol 1e-9)"))
}

fn check_permutation_equivariance() -> Result<String> {
    use rand::seq::SliceRandom;
    let n = 20;
    let (rels, h) = oracle_fixture(n, 2, 3, 91)?;
    let hyper = EnmpHyper::learned(2.0, 1.0, 4);
    let z = propagate(&h, &rels, &hyper)?.final_z().clone();

    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(92);
    perm.shuffle(&mut rng);
    // Rebuild the graph with permuted node ids and permute H the same way.
    let mut edge_lists = Vec::new();
    for rel in &rels {
        let mut edges = Vec::new();
        for i in 0..n {
            for (j, _) in rel.adj_norm().row(i) {
                if i < j {
                    edges.push((perm[i], perm[j]));
                }
            }
        }
        edge_lists.push(edges);
    }
    let permuted_graph = crate::graph::build_graph(&edge_lists, n)?;
    let permuted_rels = normalize(&permuted_graph);
    let mut h_perm = FeatureMatrix::zeros(n, h.ncols());
    for i in 0..n {
        for j in 0..h.ncols() {
            h_perm[(perm[i], j)] = h[(i, j)];
        }
    }
    let z_perm = propagate(&h_perm, &permuted_rels, &hyper)?.final_z().clone();
    let mut deviation = 0.0f64;
    for i in 0..n {
        for j in 0..h.ncols() {
            deviation = deviation.max((z_perm[(perm[i], j)] - z[(i, j)]).abs());
        }
    }
    if deviation > 1e-10 {
        return Err(EmrError::numerical(format!(
            "permuting nodes changed the output by {deviation:.3e}"
        )));
    }
    Ok(format!("max deviation {deviation:.3e} (tol 1e-10)"))
}
