//! Command-line front end: randomized verification, per-layer and
//! whole-network cost analysis, accumulator sizing, and crossover tables.
//!
//! Exit codes: 0 on success, 1 when verification finds a mismatch, 2 for
//! usage or configuration errors. All output is deterministic for a fixed
//! seed and inputs.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nesta_core::costmodel::{
    crossover_batches, cycles, first_winning_channels, valid_width_pairs, PeParams, PpaTable,
};
use nesta_core::dataflow::DataflowKind;
use nesta_core::hwc::CelVariant;
use nesta_core::netspec::{self, analyze_network, parse_network, NetworkSpec, ANALYSIS_CSV_HEADER};
use nesta_core::ppgen::OperandWidth;
use nesta_core::verify::{self, TrialOutcome, VerifyConfig};

#[derive(Parser)]
#[command(
    name = "nesta",
    version,
    about = "Bit-exact model and cost toolkit for a hamming-weight-compression convolution engine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum WidthArg {
    #[value(name = "8")]
    W8,
    #[value(name = "16")]
    W16,
}

impl From<WidthArg> for OperandWidth {
    fn from(w: WidthArg) -> Self {
        match w {
            WidthArg::W8 => OperandWidth::W8,
            WidthArg::W16 => OperandWidth::W16,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Standard,
    Star,
}

impl From<VariantArg> for CelVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Standard => CelVariant::Standard,
            VariantArg::Star => CelVariant::Star,
        }
    }
}

#[derive(Args)]
struct CommonOut {
    /// Write the report here instead of stdout
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ParamsArg {
    /// PPA parameter file (TOML); defaults to the bundled 32nm table
    #[arg(long, value_name = "FILE")]
    params: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded random engine-versus-oracle trajectories
    Verify {
        /// Base seed; every trial is replayable from (seed, trial index)
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        /// Operand register width in bits
        #[arg(long, value_enum, default_value = "16")]
        width: WidthArg,
        #[arg(long, value_enum, default_value = "standard")]
        variant: VariantArg,
        /// Fault-injection hook: corrupt this trial (with --fault-batch)
        #[arg(long, hide = true)]
        fault_trial: Option<u64>,
        /// Fault-injection hook: corrupt the state after this batch
        #[arg(long, hide = true, default_value_t = 0)]
        fault_batch: u64,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Cost one output window (kernel^2 x channels) on selected PE types
    RunLayer {
        #[arg(long, value_name = "R")]
        kernel: usize,
        #[arg(long, value_name = "C")]
        channels: usize,
        /// Comma-separated PE names from the parameter table
        #[arg(long, value_delimiter = ',', default_value = "NESTA")]
        pe: Vec<String>,
        /// Operand widths "weight_bits,data_bits" to gate against the
        /// 36-bit accumulator sizing rule
        #[arg(long, value_delimiter = ',', value_name = "W,D")]
        widths: Option<Vec<u32>>,
        #[command(flatten)]
        params: ParamsArg,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Per-layer cost and access analysis of a network spec (CSV)
    AnalyzeNet {
        /// Network spec file, or a bundled name: alexnet, vgg19
        #[arg(long, value_name = "FILE|NAME")]
        net: String,
        #[arg(long, value_delimiter = ',', default_value = "NESTA")]
        pe: Vec<String>,
        #[command(flatten)]
        params: ParamsArg,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Enumerate operand width pairs admitted by the sizing rule
    Sizing {
        /// Accumulator register size in bits
        #[arg(long, value_name = "BITS")]
        reg: u32,
        #[arg(long, value_name = "N")]
        channels: u32,
        /// Convolution window size (kernel squared)
        #[arg(long, value_name = "K2")]
        window: u32,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Batch crossover of the engine against every other PE type
    Crossover {
        /// Engine row to compare from
        #[arg(long, default_value = "NESTA")]
        engine: String,
        #[command(flatten)]
        params: ParamsArg,
        #[command(flatten)]
        out: CommonOut,
    },
    /// PPA table with area-normalized improvement columns
    Compare {
        #[arg(long, default_value = "NESTA")]
        engine: String,
        /// Silicon budget in um^2 for unit counts
        #[arg(long, default_value_t = 500_000.0)]
        budget: f64,
        /// Kernel edge for the energy-per-op column
        #[arg(long, default_value_t = 3)]
        kernel: usize,
        /// Convolutions in the notional workload
        #[arg(long, default_value_t = 1000)]
        count: u64,
        #[command(flatten)]
        params: ParamsArg,
        #[command(flatten)]
        out: CommonOut,
    },
}

#[derive(Debug)]
struct CliError(String);

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Verify {
            seed,
            trials,
            width,
            variant,
            fault_trial,
            fault_batch,
            out,
        } => cmd_verify(seed, trials, width.into(), variant.into(), fault_trial, fault_batch, out),
        Command::RunLayer {
            kernel,
            channels,
            pe,
            widths,
            params,
            out,
        } => cmd_run_layer(kernel, channels, &pe, widths.as_deref(), &params, out),
        Command::AnalyzeNet { net, pe, params, out } => cmd_analyze_net(&net, &pe, &params, out),
        Command::Sizing {
            reg,
            channels,
            window,
            out,
        } => cmd_sizing(reg, channels, window, out),
        Command::Crossover { engine, params, out } => cmd_crossover(&engine, &params, out),
        Command::Compare {
            engine,
            budget,
            kernel,
            count,
            params,
            out,
        } => cmd_compare(&engine, budget, kernel, count, &params, out),
    }
}

fn emit(text: &str, out: CommonOut) -> Result<(), CliError> {
    match out.out {
        Some(path) => fs::write(&path, text)
            .map_err(|e| CliError(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_table(params: &ParamsArg) -> Result<PpaTable, CliError> {
    match &params.params {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError(format!("cannot read {}: {e}", path.display())))?;
            Ok(PpaTable::parse(&text)?)
        }
        None => Ok(PpaTable::bundled_default()),
    }
}

fn load_net(name: &str) -> Result<NetworkSpec, CliError> {
    if let Some(spec) = netspec::bundled(name) {
        return Ok(spec);
    }
    let text = fs::read_to_string(name)
        .map_err(|e| CliError(format!("cannot read network spec {name}: {e}")))?;
    Ok(parse_network(&text)?)
}

fn variant_name(v: CelVariant) -> &'static str {
    match v {
        CelVariant::Standard => "standard",
        CelVariant::Star => "star",
    }
}

fn cmd_verify(
    seed: u64,
    trials: u64,
    width: OperandWidth,
    variant: CelVariant,
    fault_trial: Option<u64>,
    fault_batch: u64,
    out: CommonOut,
) -> Result<ExitCode, CliError> {
    if trials == 0 {
        return Err(CliError("--trials must be at least 1".into()));
    }
    let cfg = VerifyConfig {
        seed,
        trials,
        width,
        variant,
    };
    let fault = fault_trial.map(|t| (t, fault_batch));
    let report = verify::run_with_fault(&cfg, fault);

    let mut text = String::new();
    writeln!(
        text,
        "verify: trials={} width={} variant={} seed={}",
        trials,
        width.bits(),
        variant_name(variant),
        seed
    )
    .unwrap();
    writeln!(
        text,
        "trajectories: {}/{} exact ({} batches consumed)",
        report.passed, report.trials, report.total_batches
    )
    .unwrap();
    let code = match &report.counterexample {
        None => {
            writeln!(text, "result: PASS").unwrap();
            ExitCode::SUCCESS
        }
        Some(ce) => {
            match &ce.outcome {
                TrialOutcome::PartialMismatch { batch, expected, got } => writeln!(
                    text,
                    "counterexample: seed={seed} trial={} batch={batch} expected={expected} got={got} (per-cycle invariant)",
                    ce.trial
                )
                .unwrap(),
                TrialOutcome::FinalMismatch { expected, got } => writeln!(
                    text,
                    "counterexample: seed={seed} trial={} finalize expected={expected} got={got}",
                    ce.trial
                )
                .unwrap(),
                TrialOutcome::EngineFault(msg) => writeln!(
                    text,
                    "counterexample: seed={seed} trial={} engine error: {msg}",
                    ce.trial
                )
                .unwrap(),
                TrialOutcome::Pass { .. } => unreachable!("counterexamples never pass"),
            }
            writeln!(text, "result: FAIL").unwrap();
            ExitCode::from(1)
        }
    };
    emit(&text, out)?;
    Ok(code)
}

fn cmd_run_layer(
    kernel: usize,
    channels: usize,
    pe_names: &[String],
    widths: Option<&[u32]>,
    params: &ParamsArg,
    out: CommonOut,
) -> Result<ExitCode, CliError> {
    if kernel == 0 || channels == 0 {
        return Err(CliError("--kernel and --channels must be positive".into()));
    }
    if let Some(w) = widths {
        let &[w_weight, w_data] = w else {
            return Err(CliError("--widths takes exactly two values: weight_bits,data_bits".into()));
        };
        let rule = nesta_core::costmodel::SizingRule {
            reg_size: 36,
            n_ch: channels as u32,
            window: (kernel * kernel) as u32,
            w_weight,
            w_data,
        };
        if let nesta_core::costmodel::SizingCheck::Violation { required_bits, reg_size } =
            nesta_core::costmodel::check_bitwidths(&rule)
        {
            return Err(CliError(format!(
                "widths ({w_weight},{w_data}) need {required_bits} bits over {channels} \
                 channels and a {kernel}x{kernel} window, exceeding the {reg_size}-bit accumulator"
            )));
        }
    }
    let table = load_table(params)?;
    let ops = (kernel * kernel * channels) as u64;
    let batches = ops.div_ceil(9);

    let mut text = String::new();
    writeln!(text, "pe_type,batches,cycles,time_ns,energy_fj,pdp_per_op_fj").unwrap();
    for name in pe_names {
        let pe = table.get(name)?;
        let c = cycles(pe, kernel, channels);
        let time_ns = c as f64 * pe.delay_ns;
        let energy_fj = time_ns * pe.power_uw;
        writeln!(
            text,
            "{},{},{},{:.3},{:.3},{:.4}",
            pe.name,
            batches,
            c,
            time_ns,
            energy_fj,
            energy_fj / ops as f64
        )
        .unwrap();
    }
    emit(&text, out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_analyze_net(
    net: &str,
    pe_names: &[String],
    params: &ParamsArg,
    out: CommonOut,
) -> Result<ExitCode, CliError> {
    let spec = load_net(net)?;
    let table = load_table(params)?;
    let records = analyze_network(&spec, pe_names, &table, DataflowKind::rs())?;
    let mut text = String::new();
    writeln!(text, "{ANALYSIS_CSV_HEADER}").unwrap();
    for r in &records {
        writeln!(text, "{}", r.to_csv_row()).unwrap();
    }
    emit(&text, out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_sizing(reg: u32, channels: u32, window: u32, out: CommonOut) -> Result<ExitCode, CliError> {
    if reg == 0 || channels == 0 || window == 0 {
        return Err(CliError("--reg, --channels and --window must be positive".into()));
    }
    let pairs = valid_width_pairs(reg, channels, window);
    let mut text = String::new();
    writeln!(text, "sizing: reg_size={reg} n_ch={channels} window={window}").unwrap();
    if pairs.is_empty() {
        writeln!(text, "valid width pairs (w_weight, w_data): none").unwrap();
    } else {
        let rendered: Vec<String> = pairs.iter().map(|(w, d)| format!("({w},{d})")).collect();
        writeln!(
            text,
            "valid width pairs (w_weight, w_data): {}",
            rendered.join(" ")
        )
        .unwrap();
    }
    emit(&text, out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_crossover(engine: &str, params: &ParamsArg, out: CommonOut) -> Result<ExitCode, CliError> {
    let table = load_table(params)?;
    let eng = table.get(engine)?;
    let mut text = String::new();
    writeln!(text, "crossover: engine={} delay_ns={:.3}", eng.name, eng.delay_ns).unwrap();
    writeln!(text, "competitor,delay_ns,crossover_batches").unwrap();
    let mut best: Option<&PeParams> = None;
    for pe in table.entries().iter().filter(|p| p.name != eng.name) {
        let b = crossover_batches(eng.delay_ns, pe.delay_ns);
        writeln!(
            text,
            "{},{:.3},{}",
            pe.name,
            pe.delay_ns,
            b.map_or_else(|| "none".to_string(), |v| v.to_string())
        )
        .unwrap();
        // The binding competitor is the fastest nine-op unit.
        if pe.ops_per_cycle == 9 && best.is_none_or(|cur| pe.delay_ns < cur.delay_ns) {
            best = Some(pe);
        }
    }
    if let Some(pe) = best {
        let thresholds: Vec<String> = [1usize, 3, 5, 11]
            .iter()
            .map(|&r| {
                let c = first_winning_channels(eng.delay_ns, pe.delay_ns, r);
                format!(
                    "{r}x{r}={}",
                    c.map_or_else(|| "never".to_string(), |v| v.to_string())
                )
            })
            .collect();
        writeln!(
            text,
            "first winning channel count vs {}: {}",
            pe.name,
            thresholds.join(" ")
        )
        .unwrap();
    }
    emit(&text, out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(
    engine: &str,
    budget: f64,
    kernel: usize,
    count: u64,
    params: &ParamsArg,
    out: CommonOut,
) -> Result<ExitCode, CliError> {
    let table = load_table(params)?;
    let eng = table.get(engine)?;
    let rows = nesta_core::costmodel::throughput_energy_improvement(
        &table, engine, budget, kernel, count,
    )?;
    let mut text = String::new();
    writeln!(
        text,
        "compare: engine={} budget_um2={:.0} kernel={}x{} convolutions={}",
        eng.name, budget, kernel, kernel, count
    )
    .unwrap();
    writeln!(
        text,
        "pe_type,area_um2,power_uw,delay_ns,pdp_fj,units,throughput_improvement_pct,energy_improvement_pct"
    )
    .unwrap();
    writeln!(
        text,
        "{},{:.0},{:.3},{:.3},{:.3},{},-,-",
        eng.name,
        eng.area_um2,
        eng.power_uw,
        eng.delay_ns,
        eng.pdp_fj(),
        (budget / eng.area_um2) as u64,
    )
    .unwrap();
    for row in &rows {
        let pe = table.get(&row.name)?;
        writeln!(
            text,
            "{},{:.0},{:.3},{:.3},{:.3},{},{:.1},{:.1}",
            pe.name,
            pe.area_um2,
            pe.power_uw,
            pe.delay_ns,
            pe.pdp_fj(),
            row.units,
            row.throughput_pct,
            row.energy_pct
        )
        .unwrap();
    }
    emit(&text, out)?;
    Ok(ExitCode::SUCCESS)
}
