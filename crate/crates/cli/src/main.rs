use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use privauction::estimator::Dclef;
use privauction::instances::{load_instance_file, prepare, InstanceFile, PreparedInstance};
use privauction::mechanism::{run_auction_exact, run_auction_with};
use privauction::optimal::{brute_force_mask, fractional_optimum, KktCertificate};
use privauction::predictors::{
    derive_weights, load_feature_csv, parse_query, FeatureSet, Kernel, WeightSpec, DEFAULT_DROP_THRESHOLD,
};
use privauction::verify::{run_approximation_sweep, run_truthfulness_sweep, SweepConfig};
use privauction::{
    ArithmeticMode, AuctionInstance, AuctionReport, Error, FilterMode, LinearStatistic, Rational, Rules, Scalar,
    ValueInterval,
};

const EXIT_INPUT: u8 = 1;
const EXIT_EMPTY: u8 = 2;
const EXIT_PROPERTY: u8 = 3;

#[derive(Parser)]
#[command(name = "privauction", version, about = "Truthful privacy auctions for linear predictors")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Json)]
    output: OutputFormat,

    #[arg(long, global = true, value_enum)]
    arithmetic: Option<Arithmetic>,

    /// Budget-payability filter.
    #[arg(long, global = true, value_enum, default_value_t = Filter::FixedPoint)]
    filter: Filter,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Arithmetic {
    Float,
    Rational,
}

impl From<Arithmetic> for ArithmeticMode {
    fn from(a: Arithmetic) -> Self {
        match a {
            Arithmetic::Float => ArithmeticMode::Float,
            Arithmetic::Rational => ArithmeticMode::Rational,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Filter {
    FixedPoint,
    Once,
}

impl From<Filter> for FilterMode {
    fn from(f: Filter) -> Self {
        match f {
            Filter::FixedPoint => FilterMode::FixedPoint,
            Filter::Once => FilterMode::Once,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the mechanism on an instance file.
    Run {
        instance: PathBuf,
        /// Also solve for the optimum by enumeration and report OPT / S.
        #[arg(long)]
        compare_opt: bool,
        /// Release one noisy estimate on the file's database.
        #[arg(long)]
        database: bool,
    },
    /// Run the property sweeps.
    Verify {
        /// Sweep configuration (JSON); defaults apply to missing fields.
        config: Option<PathBuf>,
        /// Deliberately broken rule: payment-scale:<f>, k-includes-n,
        /// non-strict-star or no-cost-cap.
        #[arg(long)]
        mutate: Option<String>,
        #[arg(long)]
        instances: Option<usize>,
    },
    /// Derive predictor weights from a feature CSV.
    Weights(WeightsArgs),
    /// Optimal 0/1 estimator by enumeration.
    Oracle { instance: PathBuf },
    /// Closed-form optimum of the fractional relaxation.
    Fractional { instance: PathBuf },
}

#[derive(Args)]
struct WeightsArgs {
    features: PathBuf,
    /// Query features, comma separated.
    #[arg(long, conflicts_with = "query_file", allow_hyphen_values = true)]
    query: Option<String>,
    /// Single-row CSV holding the query features.
    #[arg(long)]
    query_file: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum, default_value_t = KernelKind::Gaussian)]
    kernel: KernelKind,
    #[arg(long, default_value_t = 1.0)]
    bandwidth: f64,
    /// Relative magnitude below which weights are dropped.
    #[arg(long, default_value_t = DEFAULT_DROP_THRESHOLD)]
    drop_threshold: f64,
    /// Unit costs for the kept weights; with --budget emits an instance.
    #[arg(long, allow_hyphen_values = true)]
    costs: Option<String>,
    #[arg(long)]
    budget: Option<f64>,
    /// Value interval as `min,max`.
    #[arg(long, default_value = "0,1", allow_hyphen_values = true)]
    interval: String,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Knn,
    NadarayaWatson,
    Ridge,
    KernelRegression,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KernelKind {
    Gaussian,
    Linear,
}

/// Failure carried to the exit code.
enum Failure {
    Core(Error),
    Usage(String),
    Property(Value),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CliResult = Result<String, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        // clap's own exit code 2 would collide with the empty-instance code.
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_INPUT);
        }
    };
    if let Err(e) = configure_threads() {
        return fail(Failure::Usage(e));
    }
    let out = match &cli.command {
        Command::Run {
            instance,
            compare_opt,
            database,
        } => cmd_run(&cli, instance, *compare_opt, *database),
        Command::Verify {
            config,
            mutate,
            instances,
        } => cmd_verify(&cli, config.as_deref(), mutate.as_deref(), *instances),
        Command::Weights(args) => cmd_weights(&cli, args),
        Command::Oracle { instance } => cmd_oracle(&cli, instance),
        Command::Fractional { instance } => cmd_fractional(&cli, instance),
    };
    match out {
        Ok(text) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(text.as_bytes());
            ExitCode::SUCCESS
        }
        Err(f) => fail(f),
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("PRIVAUCTION_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| format!("PRIVAUCTION_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn fail(f: Failure) -> ExitCode {
    let (code, body) = match f {
        Failure::Core(e) => {
            let code = if e == Error::EmptyInstance { EXIT_EMPTY } else { EXIT_INPUT };
            (code, error_json(&e))
        }
        Failure::Usage(message) => (EXIT_INPUT, json!({"error": "usage", "message": message})),
        Failure::Property(witnesses) => (EXIT_PROPERTY, json!({"error": "property-failure", "witnesses": witnesses})),
    };
    eprintln!("{}", serde_json::to_string(&body).expect("json"));
    ExitCode::from(code)
}

fn error_json(e: &Error) -> Value {
    let kind = match e {
        Error::Parse { .. } => "parse",
        Error::Validation(_) => "validation",
        Error::Io(_) => "io",
        Error::EmptyInstance => "empty-instance",
        Error::NotCanonical { .. } => "not-canonical",
        Error::AssumptionViolated { .. } => "assumption-violated",
        Error::DimensionMismatch { .. } => "dimension-mismatch",
        Error::InstanceTooLarge { .. } => "instance-too-large",
        Error::UnboundedPrivacyLoss { .. } => "unbounded-privacy-loss",
        Error::NonUniformWeights => "non-uniform-weights",
        Error::ParameterOutOfRange(_) => "parameter-out-of-range",
        Error::DegenerateAllOnes => "degenerate-all-ones",
        Error::KOutOfRange { .. } => "k-out-of-range",
        Error::DegenerateKernelMass => "degenerate-kernel-mass",
        Error::SingularSystem => "singular-system",
        Error::Invariant(_) => "invariant",
    };
    let mut body = json!({"error": kind, "message": e.to_string()});
    if let Error::Parse { line, column, .. } = e {
        body["line"] = json!(line);
        body["column"] = json!(column);
    }
    body
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn arithmetic(cli: &Cli) -> ArithmeticMode {
    cli.arithmetic.map(Into::into).unwrap_or(ArithmeticMode::Float)
}

#[derive(Serialize)]
struct RunReport {
    #[serde(flatten)]
    outcome: AuctionReport,
    objective: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fractional: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimate: Option<Value>,
}

fn cmd_run(cli: &Cli, path: &Path, compare_opt: bool, with_database: bool) -> CliResult {
    let file = load_instance_file(path)?;
    let inst = &file.instance;
    let mode = cli.filter.into();
    let outcome = match arithmetic(cli) {
        ArithmeticMode::Float => run_auction_with(inst, mode, Rules::Standard)?,
        ArithmeticMode::Rational => run_auction_exact(inst, mode)?,
    };
    let objective = outcome.selected.iter().map(|&i| inst.weights()[i].abs()).fold(0.0, |a, b| a + b);
    let mut report = RunReport {
        outcome,
        objective,
        oracle: None,
        fractional: None,
        ratio: None,
        estimate: None,
    };
    if compare_opt {
        let prepared = prepare(inst, mode)?;
        let oracle = oracle_json(cli, &prepared)?;
        let opt = oracle["objective"].as_f64().expect("objective");
        report.ratio = Some(if opt == objective { 1.0 } else { opt / objective });
        report.oracle = Some(oracle);
        report.fractional = match fractional_json(&prepared) {
            Ok(v) => Some(v),
            Err(Error::DegenerateAllOnes) => None,
            Err(e) => return Err(e.into()),
        };
    }
    if with_database {
        let db = file
            .database
            .as_ref()
            .ok_or_else(|| Failure::Usage("instance file has no database block".into()))?;
        let dclef = Dclef::from_selection(LinearStatistic::from_instance(inst), &report.outcome.selected);
        let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(0));
        let lef = dclef.to_lef();
        let value = lef.evaluate(db, &mut rng)?;
        report.estimate = Some(json!({
            "value": value,
            "statistic": dclef.statistic().value(db.entries()),
            "sigma": dclef.sigma(),
        }));
    }
    match cli.output {
        OutputFormat::Json => Ok(to_json(&report)),
        OutputFormat::Csv => {
            let eps = &report.outcome.dclef.epsilons;
            let rows = (0..inst.len()).map(|i| {
                vec![
                    i.to_string(),
                    inst.weights()[i].to_string(),
                    inst.unit_costs()[i].to_string(),
                    u8::from(report.outcome.dclef.x[i] == 1).to_string(),
                    report.outcome.payments[i].to_string(),
                    if eps[i].is_finite() { eps[i].to_string() } else { "inf".to_owned() },
                ]
            });
            csv_text(&["index", "weight", "unit_cost", "selected", "payment", "epsilon"], rows)
        }
    }
}

fn csv_text(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> CliResult {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Failure::Core(Error::Io(e.to_string()));
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Core(Error::Io(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("utf-8"))
}

/// Optimum on the filtered instance, reported in input order.
fn oracle_json(cli: &Cli, prepared: &PreparedInstance) -> Result<Value, Error> {
    let c = &prepared.canonical;
    let w = c.abs_weights();
    let mask = match arithmetic(cli) {
        ArithmeticMode::Float => brute_force_mask(&w, c.unit_costs(), &c.budget())?,
        ArithmeticMode::Rational => {
            let w: Vec<Rational> = w.iter().map(|&x| Rational::from_f64(x)).collect();
            let v: Vec<Rational> = c.unit_costs().iter().map(|&x| Rational::from_f64(x)).collect();
            brute_force_mask(&w, &v, &Rational::from_f64(c.budget()))?
        }
    };
    let x: Vec<bool> = (0..c.len()).map(|i| mask >> i & 1 == 1).collect();
    let objective = (0..c.len()).filter(|&i| x[i]).fold(0.0, |a, i| a + w[i]);
    let residual = (0..c.len()).filter(|&i| !x[i]).fold(0.0, |a, i| a + w[i]);
    let payments: Vec<f64> = (0..c.len())
        .map(|i| if x[i] && residual > 0.0 { c.unit_costs()[i] * w[i] / residual } else { 0.0 })
        .collect();
    let x_input = prepared.to_input_order(&x.iter().map(|&b| u8::from(b)).collect::<Vec<_>>(), 0);
    Ok(json!({
        "x": x_input,
        "objective": objective,
        "payments": prepared.to_input_order(&payments, 0.0),
        "removed": prepared.removed,
    }))
}

fn fractional_json(prepared: &PreparedInstance) -> Result<Value, Error> {
    let sol = fractional_optimum(&prepared.canonical)?;
    let cert: KktCertificate = sol.kkt_certificate();
    Ok(json!({
        "x_star": prepared.to_input_order(&sol.x_star, 0.0),
        "payments": prepared.to_input_order(&sol.payments, 0.0),
        "ell": sol.ell,
        "objective": sol.objective,
        "certificate": {
            "lambda": cert.lambda,
            "stationarity": cert.stationarity,
            "complementary_slackness": cert.complementary_slackness,
            "budget_gap": cert.budget_gap,
            "min_multiplier": cert.min_multiplier,
        },
        "removed": prepared.removed,
    }))
}

fn cmd_oracle(cli: &Cli, path: &Path) -> CliResult {
    let file = load_instance_file(path)?;
    let prepared = prepare(&file.instance, cli.filter.into())?;
    let v = oracle_json(cli, &prepared)?;
    match cli.output {
        OutputFormat::Json => Ok(to_json(&v)),
        OutputFormat::Csv => {
            let n = file.instance.len();
            csv_text(
                &["index", "x", "payment"],
                (0..n).map(|i| vec![i.to_string(), v["x"][i].to_string(), v["payments"][i].to_string()]),
            )
        }
    }
}

fn cmd_fractional(cli: &Cli, path: &Path) -> CliResult {
    let file = load_instance_file(path)?;
    let prepared = prepare(&file.instance, cli.filter.into())?;
    let v = fractional_json(&prepared)?;
    match cli.output {
        OutputFormat::Json => Ok(to_json(&v)),
        OutputFormat::Csv => {
            let n = file.instance.len();
            csv_text(
                &["index", "x_star", "payment"],
                (0..n).map(|i| vec![i.to_string(), v["x_star"][i].to_string(), v["payments"][i].to_string()]),
            )
        }
    }
}

fn parse_mutation(text: &str) -> Result<Rules, Failure> {
    let bad = || Failure::Usage(format!("unknown mutation {text:?}"));
    match text.split_once(':') {
        Some(("payment-scale", s)) => s.trim().parse().map(Rules::PaymentScale).map_err(|_| bad()),
        None => match text {
            "k-includes-n" => Ok(Rules::KIncludesN),
            "non-strict-star" => Ok(Rules::NonStrictStar),
            "no-cost-cap" => Ok(Rules::NoCostCap),
            "none" | "standard" => Ok(Rules::Standard),
            _ => Err(bad()),
        },
        _ => Err(bad()),
    }
}

fn cmd_verify(cli: &Cli, path: Option<&Path>, mutate: Option<&str>, instances: Option<usize>) -> CliResult {
    let mut config = match path {
        Some(p) => SweepConfig::from_json_str(&std::fs::read_to_string(p).map_err(Error::from)?)?,
        None => SweepConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.rng_seed = seed;
    }
    if let Some(a) = cli.arithmetic {
        config.arithmetic_mode = a.into();
    }
    if let Some(m) = mutate {
        config.rules = parse_mutation(m)?;
    }
    if let Some(n) = instances {
        config.instance_count = n;
    }
    config.filter_mode = cli.filter.into();
    config.validate()?;

    let truth = run_truthfulness_sweep(&config)?;
    let approx = if config.n_range.1 <= privauction::optimal::ORACLE_LIMIT && config.rules == Rules::Standard {
        Some(run_approximation_sweep(&config)?)
    } else {
        None
    };
    let passed = truth.passed() && approx.as_ref().is_none_or(|a| a.passed());
    let text = match cli.output {
        OutputFormat::Json => to_json(&json!({
            "passed": passed,
            "truthfulness": truth,
            "approximation": approx,
        })),
        OutputFormat::Csv => {
            let mut buf = Vec::new();
            if let Some(a) = &approx {
                a.write_csv(&mut buf)?;
            }
            String::from_utf8(buf).expect("utf-8")
        }
    };
    if passed {
        return Ok(text);
    }
    // The report still goes to stdout; the witnesses go to stderr.
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
    let mut witnesses = truth.witnesses.clone();
    if let Some(a) = &approx {
        witnesses.extend(a.witnesses.iter().cloned());
    }
    Err(Failure::Property(serde_json::to_value(witnesses).expect("json")))
}

fn parse_list(text: &str) -> Result<Vec<f64>, Failure> {
    parse_query(text).map_err(Failure::Core)
}

fn cmd_weights(cli: &Cli, args: &WeightsArgs) -> CliResult {
    let table = load_feature_csv(&args.features)?;
    let query = match (&args.query, &args.query_file) {
        (Some(q), _) => parse_list(q)?,
        (None, Some(p)) => {
            let q = load_feature_csv(p)?;
            match q.rows.as_slice() {
                [row] => row.clone(),
                _ => return Err(Failure::Usage("query file must hold exactly one row".into())),
            }
        }
        (None, None) => return Err(Failure::Usage("one of --query or --query-file is required".into())),
    };
    let features = FeatureSet::new(table.rows, query)?;
    let kernel = match args.kernel {
        KernelKind::Gaussian => Kernel::Gaussian {
            bandwidth: args.bandwidth,
        },
        KernelKind::Linear => Kernel::Linear,
    };
    let need = |v: Option<f64>, name: &str| v.ok_or_else(|| Failure::Usage(format!("--{name} is required")));
    let spec = match args.method {
        Method::Knn => WeightSpec::Knn {
            k: args.k.ok_or_else(|| Failure::Usage("--k is required".into()))?,
        },
        Method::NadarayaWatson => WeightSpec::NadarayaWatson { kernel },
        Method::Ridge => WeightSpec::Ridge {
            lambda: need(args.lambda, "lambda")?,
        },
        Method::KernelRegression => WeightSpec::KernelRegression {
            kernel,
            lambda: need(args.lambda, "lambda")?,
        },
    };
    let derived = derive_weights(&features, spec, args.drop_threshold)?;
    for w in &derived.warnings {
        eprintln!("{}", json!({"warning": w}));
    }

    let value = match (&args.costs, args.budget) {
        (None, None) => serde_json::to_value(&derived).expect("json"),
        (Some(costs), Some(budget)) => {
            let costs = parse_list(costs)?;
            if costs.len() != derived.weights.len() {
                return Err(Error::DimensionMismatch {
                    expected: derived.weights.len(),
                    found: costs.len(),
                }
                .into());
            }
            let bounds = parse_list(&args.interval)?;
            let [lo, hi] = bounds[..] else {
                return Err(Failure::Usage("--interval takes min,max".into()));
            };
            let instance = AuctionInstance::new(derived.weights.clone(), costs, budget, ValueInterval::new(lo, hi)?)?;
            let file = InstanceFile {
                instance,
                database: None,
            };
            // Validate as a loadable file (positive budget).
            InstanceFile::from_json_str(&file.to_json_string())?;
            let mut v: Value = serde_json::from_str(&file.to_json_string()).expect("json");
            v["index_map"] = json!(derived.index_map);
            v["dropped"] = json!(derived.dropped);
            v
        }
        _ => return Err(Failure::Usage("--costs and --budget go together".into())),
    };
    match cli.output {
        OutputFormat::Json => Ok(to_json(&value)),
        OutputFormat::Csv => csv_text(
            &["row", "weight"],
            derived
                .index_map
                .iter()
                .zip(&derived.weights)
                .map(|(i, w)| vec![i.to_string(), w.to_string()]),
        ),
    }
}
