use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde_json::{Map, Value};

use oodkit_core::fit::{fit_all, FitConfig, KlGrouping, DEFAULT_K};
use oodkit_core::io::{load_state, read_manifest, read_pool_table, read_scores, read_tensor_file, save_state};
use oodkit_core::io::{write_pack, write_scores, write_tensor_file, ReadOptions};
use oodkit_core::linalg::DEFAULT_JITTER_SCALE;
use oodkit_core::metrics::{evaluate, AucPooling, DEFAULT_FAIL_THRESHOLD, DEFAULT_TPR};
use oodkit_core::pool::{emit_report, parse_predicates, CorrelationSpec, GroupSpec, ReportSpec, ScatterSpec};
use oodkit_core::scorers::{score_pack, CosineMode, ScoreOptions};
use oodkit_core::synth::{synth_pack, SynthSpec, RNG_ALGORITHM};
use oodkit_core::{ClassifierHead, EvalResult, Method, Tensor};

#[derive(Parser)]
#[command(name = "oodkit", version, about = "Post-hoc OOD detection on precomputed features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit detector statistics on a train pack.
    Fit(FitArgs),
    /// Score a pack with one method.
    Score(ScoreArgs),
    /// FPR at a fixed TPR and AUROC from score files.
    Eval(EvalArgs),
    /// Generate seeded Gaussian packs and their discriminant head.
    Synth(SynthArgs),
    /// Correlations, group summaries and scatter data from a model-pool table.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KlGroupArg {
    Predicted,
    Labels,
}

#[derive(Clone, Copy, ValueEnum)]
enum CosineArg {
    Normalized,
    Verbatim,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolingArg {
    PerClass,
    Pooled,
}

#[derive(Clone)]
struct MethodList(Vec<Method>);

#[derive(Clone)]
struct OodList(Vec<(String, PathBuf)>);

#[derive(Clone)]
struct Columns(Vec<String>);

fn parse_methods(s: &str) -> Result<MethodList, String> {
    Method::parse_list(s).map(MethodList).map_err(|e| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: oodkit_core::Error| e.to_string())
}

fn parse_unit_open(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1]"))
    }
}

fn parse_unit_closed(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be positive and finite"))
    }
}

fn parse_count(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(format!("`{s}` is not a positive integer")),
    }
}

fn parse_head(s: &str) -> Result<(PathBuf, PathBuf), String> {
    match s.split(',').collect::<Vec<_>>()[..] {
        [w, b] if !w.is_empty() && !b.is_empty() => Ok((w.into(), b.into())),
        _ => Err("expected WEIGHT.oodt,BIAS.oodt".into()),
    }
}

fn parse_ood(s: &str) -> Result<OodList, String> {
    s.split(',')
        .filter(|p| !p.is_empty())
        .map(|p| match p.split_once('=') {
            Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), path.into())),
            _ => Err(format!("`{p}` is not of the form name=path")),
        })
        .collect::<Result<_, _>>()
        .map(OodList)
}

fn parse_columns(s: &str) -> Result<Columns, String> {
    let cols: Vec<String> =
        s.split(',').map(str::trim).filter(|c| !c.is_empty()).map(|c| c.replace('-', "_")).collect();
    if cols.is_empty() {
        Err("empty column list".into())
    } else {
        Ok(Columns(cols))
    }
}

#[derive(Args)]
struct FitArgs {
    /// Train pack manifest.
    #[arg(long)]
    train: PathBuf,
    /// Classifier head as WEIGHT.oodt,BIAS.oodt (d×C and C).
    #[arg(long, value_parser = parse_head)]
    head: (PathBuf, PathBuf),
    /// `all` or a comma-separated list of method names.
    #[arg(long, default_value = "all", value_parser = parse_methods)]
    methods: MethodList,
    /// Output state directory.
    #[arg(long)]
    out: PathBuf,
    /// Neighbour rank used by knn.
    #[arg(long, default_value_t = DEFAULT_K, value_parser = parse_count)]
    k: usize,
    /// Relative ridge added when a covariance is singular.
    #[arg(long, default_value_t = DEFAULT_JITTER_SCALE, value_parser = parse_positive)]
    jitter_scale: f64,
    #[arg(long, value_enum, default_value = "predicted")]
    kl_group_by: KlGroupArg,
    /// ViM principal dimension (default depends on the feature dimension).
    #[arg(long, value_parser = parse_count)]
    vim_dim: Option<usize>,
    /// Stop at the first method that fails to fit.
    #[arg(long)]
    fail_fast: bool,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    state: PathBuf,
    /// Pack manifest to score.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Score tensor path; the sidecar goes next to it with a .json extension.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "normalized")]
    cosine_mode: CosineArg,
}

#[derive(Args)]
struct EvalArgs {
    /// ID score file.
    #[arg(long)]
    id: PathBuf,
    /// OOD score files as name=path[,name=path...]; may be repeated.
    #[arg(long, required = true, value_parser = parse_ood)]
    ood: Vec<OodList>,
    /// Target true positive rate, in (0, 1].
    #[arg(long, default_value_t = DEFAULT_TPR, value_parser = parse_unit_open)]
    q: f64,
    /// A class with FPR at or above this counts as failed.
    #[arg(long, default_value_t = DEFAULT_FAIL_THRESHOLD, value_parser = parse_unit_closed)]
    fail_threshold: f64,
    #[arg(long, value_enum, default_value = "per-class")]
    auc_pooling: PoolingArg,
    /// Output JSON; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON spec with num_classes, dim, per_class, separation, within_std,
    /// ood_shift and seed.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(group(ArgGroup::new("outputs").required(true).multiple(true).args(["corr", "group_by", "scatter"])))]
struct ReportArgs {
    #[arg(long)]
    pool: PathBuf,
    /// Row filter column=value[,column=value...].
    #[arg(long, default_value = "")]
    filter: String,
    /// Kendall τ-b between two columns, x:y; may be repeated.
    #[arg(long)]
    corr: Vec<String>,
    #[arg(long, value_parser = parse_columns, requires = "metrics")]
    group_by: Option<Columns>,
    #[arg(long, value_parser = parse_columns, requires = "group_by")]
    metrics: Option<Columns>,
    /// Scatter series x:y:key; may be repeated.
    #[arg(long)]
    scatter: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

fn write_json(value: &EvalResult, out: Option<&Path>) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run_fit(args: FitArgs) -> anyhow::Result<()> {
    let (_, train) = read_manifest(&args.train)?;
    let opts = ReadOptions::default();
    let head = ClassifierHead::from_tensors(&read_tensor_file(&args.head.0, opts)?, &read_tensor_file(&args.head.1, opts)?)?;
    let config = FitConfig {
        methods: args.methods.0,
        knn_k: args.k,
        jitter_scale: args.jitter_scale,
        kl_grouping: match args.kl_group_by {
            KlGroupArg::Predicted => KlGrouping::Predicted,
            KlGroupArg::Labels => KlGrouping::Labels,
        },
        vim_dim: args.vim_dim,
        fail_fast: args.fail_fast,
    };
    let outcome = fit_all(&train, &head, &config)?;
    save_state(&outcome.state, &args.out)?;
    log::info!("fitted {:?} into {}", outcome.state.provenance.fitted, args.out.display());
    if !outcome.failures.is_empty() {
        let names: Vec<String> = outcome.failures.iter().map(|(m, e)| format!("{m}: {e}")).collect();
        bail!("state written, but some methods failed to fit: {}", names.join("; "));
    }
    Ok(())
}

fn run_score(args: ScoreArgs) -> anyhow::Result<()> {
    let state = load_state(&args.state)?;
    let (_, pack) = read_manifest(&args.data)?;
    let opts = ScoreOptions {
        cosine_mode: match args.cosine_mode {
            CosineArg::Normalized => CosineMode::Normalized,
            CosineArg::Verbatim => CosineMode::Verbatim,
        },
    };
    let scores = score_pack(&pack, &state, args.method, opts)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_scores(&scores, &args.out)?;
    Ok(())
}

fn run_eval(args: EvalArgs) -> anyhow::Result<()> {
    let id = read_scores(&args.id)?;
    let ood = args
        .ood
        .into_iter()
        .flat_map(|list| list.0)
        .map(|(name, path)| Ok((name, read_scores(&path)?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let pooling = match args.auc_pooling {
        PoolingArg::PerClass => AucPooling::PerClass,
        PoolingArg::Pooled => AucPooling::Pooled,
    };
    let result = evaluate(&id, &ood, args.q, args.fail_threshold, pooling)?;
    write_json(&result, args.out.as_deref())
}

fn run_synth(args: SynthArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&args.spec).with_context(|| format!("reading {}", args.spec.display()))?;
    let spec: SynthSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", args.spec.display()))?;
    let packs = synth_pack(&spec)?;
    let head = spec.head()?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let mut metadata = Map::new();
    metadata.insert("generator".into(), Value::String("synth".into()));
    metadata.insert("rng".into(), Value::String(RNG_ALGORITHM.into()));
    metadata.insert("spec".into(), serde_json::to_value(&spec)?);
    write_pack(&packs.train, &args.out, "train", metadata.clone())?;
    write_pack(&packs.id_test, &args.out, "id_test", metadata.clone())?;
    write_pack(&packs.ood, &args.out, "ood", metadata)?;

    let (d, c) = (head.feature_dim(), head.num_classes());
    let w: Vec<f64> = head.weight().transpose().iter().copied().collect();
    write_tensor_file(&Tensor::from_f64(vec![d, c], w)?, args.out.join("head_weight.oodt"))?;
    write_tensor_file(&Tensor::from_f64(vec![c], head.bias().iter().copied().collect())?, args.out.join("head_bias.oodt"))?;
    Ok(())
}

fn run_report(args: ReportArgs) -> anyhow::Result<()> {
    let table = read_pool_table(&args.pool)?;
    let spec = ReportSpec {
        filters: parse_predicates(&args.filter)?,
        correlations: args.corr.iter().map(|c| CorrelationSpec::parse(c)).collect::<Result<_, _>>()?,
        groups: match (args.group_by, args.metrics) {
            (Some(group_by), Some(metrics)) => Some(GroupSpec { group_by: group_by.0, metrics: metrics.0 }),
            _ => None,
        },
        scatters: args.scatter.iter().map(|s| ScatterSpec::parse(s)).collect::<Result<_, _>>()?,
    };
    for path in emit_report(&table, &spec, &args.out)? {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("OODKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| format!("OODKIT_THREADS=`{raw}` is not a thread count"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Score(a) => run_score(a),
        Command::Eval(a) => run_eval(a),
        Command::Synth(a) => run_synth(a),
        Command::Report(a) => run_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
