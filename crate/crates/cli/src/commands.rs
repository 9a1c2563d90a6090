use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use sure_ir_core::bench::{am_rsnr, run_sweep, AmSignal, SweepSpec, SweepVariable, TrialParams, FULL_TRIALS};
use sure_ir_core::io::{
    read_matrix_csv, read_signal_csv, write_signal_csv, write_sweep_csv, write_trial_log, EstimateJson, FreqUnits,
    InstanceMetadata, RowSparseEstimateJson,
};
use sure_ir_core::mmv::run_sure_ir_mmv;
use sure_ir_core::oracle::run_suites;
use sure_ir_core::signal::random_instance;
use sure_ir_core::solver::run_sure_ir;
use sure_ir_core::SolverConfig;

use crate::args::{
    Cli, Command, ConfigArgs, DemoAmArgs, EstimateArgs, EstimateMmvArgs, SolverArgs, SweepArgs, SynthArgs, VerifyArgs,
};
use crate::error::{CliError, CliResult};

/// Context shared by every subcommand.
struct Globals {
    seed: u64,
    units: FreqUnits,
    verbose: bool,
}

pub fn run(cli: Cli) -> CliResult<()> {
    let g = Globals {
        seed: cli.seed,
        units: if cli.radians { FreqUnits::Radians } else { FreqUnits::Cycles },
        verbose: cli.verbose,
    };
    match cli.command {
        Command::Estimate(a) => estimate(&g, a),
        Command::EstimateMmv(a) => estimate_mmv(&g, a),
        Command::Synth(a) => synth(&g, a),
        Command::Verify(a) => verify(&g, a),
        Command::Sweep(a) => sweep(&g, a),
        Command::DemoAm(a) => demo_am(&g, a),
        Command::Config(a) => config(&g, a),
    }
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
}

/// `path` if given, stdout otherwise.
fn sink(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: serde::Serialize>(out: &mut dyn Write, value: &T) -> CliResult<()> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| CliError::Runtime(e.to_string()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Defaults, then the `--config` file, then individual flags.
pub fn resolve_config(a: &SolverArgs) -> CliResult<SolverConfig> {
    let mut cfg = match &a.config {
        Some(p) => read_json::<SolverConfig>(p)?,
        None => SolverConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(
            if let Some(v) = a.$flag {
                cfg.$field = v;
            }
        )*};
    }
    set!(lambda0 => lambda0, d => d, tau => tau, eps_init => eps_init, eps_min => eps_min,
         warmup => warmup_iters, max_iters => max_outer_iters, conv_tol => conv_tol);
    cfg.validate()?;
    Ok(cfg)
}

fn resolved(g: &Globals, a: &SolverArgs) -> CliResult<SolverConfig> {
    let cfg = resolve_config(a)?;
    if g.verbose {
        eprintln!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
    }
    Ok(cfg)
}

fn set_jobs(jobs: Option<usize>) -> CliResult<()> {
    let Some(n) = jobs else { return Ok(()) };
    if n == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn format_freqs(freqs: &[f64]) -> String {
    freqs.iter().map(|f| format!("{f:.6}")).collect::<Vec<_>>().join(" ")
}

fn estimate(g: &Globals, a: EstimateArgs) -> CliResult<()> {
    let cfg = resolved(g, &a.solver)?;
    let samples = read_signal_csv(open(&a.input)?).map_err(|e| CliError::from(e).in_file(&a.input))?;
    let est = run_sure_ir(&samples.values, &samples.indices, &cfg)?;
    let json = EstimateJson::new(&est, g.units);
    println!("K = {}", est.freqs.len());
    println!("frequencies ({}): {}", units_name(g.units), format_freqs(&json.freqs));
    if let Some(p) = &a.out {
        write_json(&mut create(p)?, &json)?;
    }
    Ok(())
}

fn estimate_mmv(g: &Globals, a: EstimateMmvArgs) -> CliResult<()> {
    let cfg = resolved(g, &a.solver)?;
    let obs = read_matrix_csv(open(&a.input)?, a.t).map_err(|e| CliError::from(e).in_file(&a.input))?;
    let est = run_sure_ir_mmv(&obs, &cfg)?;
    let json = RowSparseEstimateJson::new(&est, g.units);
    println!("K = {} over {} snapshots", est.freqs.len(), obs.snapshots());
    println!("frequencies ({}): {}", units_name(g.units), format_freqs(&json.freqs));
    if let Some(p) = &a.out {
        write_json(&mut create(p)?, &json)?;
    }
    Ok(())
}

fn units_name(u: FreqUnits) -> &'static str {
    match u {
        FreqUnits::Cycles => "cycles/sample",
        FreqUnits::Radians => "rad/sample",
    }
}

fn synth(g: &Globals, a: SynthArgs) -> CliResult<()> {
    if a.m > a.t {
        return Err(CliError::Usage(format!("m = {} exceeds t = {}", a.m, a.t)));
    }
    let psnr = a.psnr.unwrap_or(f64::INFINITY);
    let inst = random_instance(a.k, a.t, a.m, psnr, g.seed)?;
    let meta_path = a.meta.clone().unwrap_or_else(|| a.out.with_extension("json"));
    if meta_path == a.out {
        return Err(CliError::Usage("metadata path must differ from the signal path".into()));
    }
    let mut w = create(&a.out)?;
    write_signal_csv(&mut w, &inst.sample_indices, &inst.observations)?;
    write_json(&mut create(&meta_path)?, &InstanceMetadata::from(&inst))?;
    if g.verbose {
        eprintln!("wrote {} and {}", a.out.display(), meta_path.display());
    }
    Ok(())
}

fn verify(g: &Globals, a: VerifyArgs) -> CliResult<()> {
    let reports = run_suites(a.suite.as_deref(), g.seed)?;
    write_json(&mut sink(None)?, &reports)?;
    let failed = reports.iter().filter(|r| !r.pass).count();
    for r in reports.iter().filter(|r| !r.pass) {
        eprintln!("FAIL {}: max rel err {:.3e} > tol {:.3e}", r.name, r.max_rel_err, r.tolerance);
    }
    match failed {
        0 => Ok(()),
        _ => Err(CliError::Verification {
            failed,
            total: reports.len(),
        }),
    }
}

/// Parses `a,b,c`, `a..b:step` or `a..b`. Without a step, integer endpoints count by 1
/// and other ranges are split into 8 equal steps. Endpoints are inclusive.
pub fn parse_values(s: &str) -> CliResult<Vec<f64>> {
    let bad = |why: &str| CliError::Usage(format!("invalid --values '{s}': {why}"));
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad(&format!("'{}' is not a number", t.trim())));
    let values = match s.split_once("..") {
        None => s.split(',').map(num).collect::<CliResult<Vec<f64>>>()?,
        Some((lo, rest)) => {
            let (hi, step) = match rest.split_once(':') {
                Some((hi, step)) => (num(hi)?, Some(num(step)?)),
                None => (num(rest)?, None),
            };
            let lo = num(lo)?;
            if !(hi >= lo) {
                return Err(bad("range end is below its start"));
            }
            let step = step.unwrap_or(if lo.fract() == 0.0 && hi.fract() == 0.0 { 1.0 } else { (hi - lo) / 8.0 });
            if !(step > 0.0) && hi > lo {
                return Err(bad("step must be positive"));
            }
            let n = if hi > lo { ((hi - lo) / step + 1e-9).floor() as usize } else { 0 };
            // lo + i·step rather than repeated addition keeps 0.4..2.0 free of drift.
            (0..=n).map(|i| lo + i as f64 * step).collect()
        }
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(bad("values must be finite"));
    }
    Ok(values)
}

fn sweep_spec(g: &Globals, a: &SweepArgs) -> CliResult<SweepSpec> {
    let mut spec = match &a.spec {
        Some(p) => read_json::<SweepSpec>(p)?,
        None => SweepSpec {
            variable: SweepVariable::parse(a.variable.as_deref().expect("required by clap"))?,
            values: parse_values(a.values.as_deref().expect("required by clap"))?,
            fixed: TrialParams {
                k: a.k,
                t: a.t,
                m: a.m,
                psnr_db: a.psnr,
                spacing_mu: a.mu,
            },
            trials: a.trials,
            base_seed: g.seed,
        },
    };
    if a.full {
        spec.trials = FULL_TRIALS;
    }
    spec.validate()?;
    Ok(spec)
}

fn sweep(g: &Globals, a: SweepArgs) -> CliResult<()> {
    let cfg = resolved(g, &a.solver)?;
    let spec = sweep_spec(g, &a)?;
    set_jobs(a.jobs)?;
    let total = spec.values.len();
    let mut done = 0;
    let (rows, records) = run_sweep(&spec, &cfg, |row| {
        done += 1;
        eprintln!(
            "[{done}/{total}] {}={}: success {:.3}, mean rsnr {:.2} dB",
            row.variable, row.value, row.success_rate, row.mean_rsnr_db
        );
    })?;
    let mut out = sink(a.out.as_deref())?;
    write_sweep_csv(&mut out, &rows)?;
    if let Some(p) = &a.log {
        let mut w = create(p)?;
        write_trial_log(&mut w, &records)?;
        w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(())
}

fn demo_am(g: &Globals, a: DemoAmArgs) -> CliResult<()> {
    let cfg = resolved(g, &a.solver)?;
    set_jobs(a.jobs)?;
    let mut signal = AmSignal {
        seed: g.seed,
        ..AmSignal::default()
    };
    if let Some(text) = a.text {
        signal.text = text;
    }
    let mut out = sink(a.out.as_deref())?;
    let io_err = |e: io::Error| CliError::Runtime(e.to_string());
    writeln!(out, "ratio,rsnr_db").map_err(io_err)?;
    for &ratio in &a.ratios {
        let db = am_rsnr(&signal, ratio, &cfg, g.seed)?;
        writeln!(out, "{ratio},{db}").map_err(io_err)?;
        out.flush().map_err(io_err)?;
    }
    Ok(())
}

fn config(g: &Globals, a: ConfigArgs) -> CliResult<()> {
    let cfg = if a.default {
        SolverConfig::default()
    } else {
        resolved(g, &a.solver)?
    };
    write_json(&mut sink(None)?, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    #[test]
    fn values_lists_and_ranges() {
        assert_eq!(parse_values("10,20,30").unwrap(), vec![10.0, 20.0, 30.0]);
        assert_eq!(parse_values("10..40:10").unwrap(), vec![10.0, 20.0, 30.0, 40.0]);
        assert_eq!(parse_values("3..5").unwrap(), vec![3.0, 4.0, 5.0]);
        let mu = parse_values("0.4..2.0").unwrap();
        assert_eq!(mu.len(), 9);
        assert!((mu[8] - 2.0).abs() < 1e-12 && (mu[1] - 0.6).abs() < 1e-12);
        assert_eq!(parse_values("7..7").unwrap(), vec![7.0]);
    }

    #[test]
    fn values_rejects_garbage() {
        for s in ["", "a,b", "5..1", "1..3:0", "1..3:-1", "nan", "1,inf"] {
            assert!(matches!(parse_values(s), Err(CliError::Usage(_))), "{s}");
        }
    }

    #[test]
    fn flags_override_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.json");
        std::fs::write(&p, r#"{"tau": 0.1, "d": 2.0}"#).unwrap();
        let a = SolverArgs {
            config: Some(p),
            d: Some(7.0),
            ..Default::default()
        };
        let cfg = resolve_config(&a).unwrap();
        assert_eq!((cfg.tau, cfg.d, cfg.lambda0), (0.1, 7.0, SolverConfig::default().lambda0));
    }

    #[test]
    fn unknown_config_fields_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.json");
        std::fs::write(&p, r#"{"taus": 0.1}"#).unwrap();
        let a = SolverArgs {
            config: Some(p),
            ..Default::default()
        };
        assert!(matches!(resolve_config(&a), Err(CliError::Usage(_))));
    }

    #[test]
    fn invalid_overrides_are_usage_errors() {
        let a = SolverArgs {
            tau: Some(-1.0),
            ..Default::default()
        };
        assert!(matches!(resolve_config(&a), Err(CliError::Usage(_))));
    }

    #[test]
    fn paths_in_messages() {
        let e = CliError::Usage("line 3: bad".into()).in_file(&PathBuf::from("x.csv"));
        assert_eq!(e.to_string(), "x.csv: line 3: bad");
    }
}
