use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use surrogate_core::asymptotics::{check_theorem2, covariance_summary, LethalityOrdering};
use surrogate_core::experiments::{
    analyze_meta, read_trial_summaries, run_simulation, scatter_export, table2_report, DesignName, SimulationDesign,
    Table2Report, DEFAULT_REGION_ALPHA, DEFAULT_TEST_ALPHA,
};
use surrogate_core::format::sig6;
use surrogate_core::model::{derive_endpoints, ScenarioRegistry};
use surrogate_core::regions::{render_panel_svg, write_boundary_csv, PanelEntry, DEFAULT_RHO_SWEEP};
use surrogate_core::Execution;

#[derive(Parser, Debug)]
#[command(name = "surrogate", version, about = "Surrogate endpoint meta-regression simulations and analysis")]
struct Cli {
    /// Directory for output files.
    #[arg(long, global = true, env = "SURROGATE_OUT_DIR", default_value = ".")]
    out: PathBuf,

    /// Overwrite existing output files.
    #[arg(long, global = true)]
    force: bool,

    /// Run repetitions on a single thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one simulation design (A, B, C or D).
    Simulate {
        design: DesignName,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Number of repetitions.
        #[arg(long = "N")]
        repetitions: Option<usize>,
        /// Trials per repetition.
        #[arg(long = "n-trials")]
        n_trials: Option<usize>,
        /// Control arm size.
        #[arg(long)]
        n: Option<u64>,
        /// Screen arm size.
        #[arg(long)]
        m: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_TEST_ALPHA)]
        alpha: f64,
        /// Format of the summary file.
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Reproduce the simulation results table with 100 and 1,000 repetitions.
    Table2 {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Check positivity of the S/M covariance on random parameter draws.
    TheoremCheck {
        #[arg(long, default_value_t = 10_000)]
        draws: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Draw parameters violating the stage-lethality assumption instead.
        #[arg(long)]
        violate: bool,
    },
    /// Meta-regression and confidence regions from a trial-summary CSV.
    Analyze {
        csv: PathBuf,
        /// Assumed correlations, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RHO_SWEEP)]
        rho: Vec<f64>,
        #[arg(long, default_value_t = DEFAULT_REGION_ALPHA)]
        alpha: f64,
        /// Boundary points per ellipse.
        #[arg(long, default_value_t = 100)]
        points: usize,
        /// Also write one SVG panel per rho.
        #[arg(long)]
        svg: bool,
    },
    /// Print the scenario registry (printed and reconstructed parameters).
    Scenarios {
        /// Emit the registry as JSON.
        #[arg(long)]
        json: bool,
        /// Emit covariance and certificate summaries at the given arm sizes.
        #[arg(long)]
        covariance: bool,
        #[arg(long, default_value_t = 20_000)]
        n: u64,
        #[arg(long, default_value_t = 20_000)]
        m: u64,
    },
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

/// Files produced by one command, written only after every target is known
/// to be writable.
struct Outputs {
    dir: PathBuf,
    force: bool,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn new(dir: &Path, force: bool) -> Self {
        Self {
            dir: dir.to_path_buf(),
            force,
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: impl Into<String>, contents: impl Into<Vec<u8>>) {
        self.files.push((name.into(), contents.into()));
    }

    fn commit(self) -> anyhow::Result<Vec<PathBuf>> {
        fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        if !self.force {
            if let Some((name, _)) = self.files.iter().find(|(name, _)| self.dir.join(name).exists()) {
                return Err(anyhow!(
                    "{} already exists (pass --force to overwrite)",
                    self.dir.join(name).display()
                ));
            }
        }
        let mut written = Vec::new();
        for (name, bytes) in self.files {
            let path = self.dir.join(name);
            fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn file_token(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn simulate(cli: &Cli, exec: Execution) -> Result<(), Failure> {
    let Command::Simulate { design, seed, repetitions, n_trials, n, m, alpha, format } = &cli.command else {
        unreachable!()
    };
    let mut d = SimulationDesign::standard(*design);
    if let Some(v) = repetitions {
        d.repetitions = *v;
    }
    if let Some(v) = n_trials {
        d.n_trials = *v;
    }
    if let Some(v) = n {
        d.n = *v;
    }
    if let Some(v) = m {
        d.m = *v;
    }
    d.alpha = *alpha;
    d.validate().map_err(|e| Failure::Usage(e.to_string()))?;

    let summary = run_simulation(&d, *seed, exec).map_err(|e| anyhow!(e))?;
    let stem = format!("simulate_{design}");
    let mut out = Outputs::new(&cli.out, cli.force);
    match format {
        Format::Json => out.add(
            format!("{stem}_summary.json"),
            serde_json::to_string_pretty(&summary.to_json_value()).map_err(|e| anyhow!(e))? + "\n",
        ),
        Format::Csv => out.add(format!("{stem}_summary.csv"), summary.to_csv()),
    }
    let mut scatter = Vec::new();
    scatter_export(&summary, &mut scatter).map_err(|e| anyhow!(e))?;
    out.add(format!("{stem}_scatter.csv"), scatter);
    let report = summary.report();
    out.add(format!("{stem}_report.txt"), report.clone());
    out.commit()?;
    print!("{report}");
    Ok(())
}

fn table2(cli: &Cli, seed: u64, exec: Execution) -> Result<(), Failure> {
    let report = table2_report(seed, exec).map_err(|e| anyhow!(e))?;
    let mut out = Outputs::new(&cli.out, cli.force);
    for (reps, rows) in &report.runs {
        out.add(format!("table2_N{reps}.csv"), Table2Report::to_csv(rows));
    }
    let text = report.to_text();
    out.add("table2.txt", text.clone());
    out.commit()?;
    print!("{text}");
    Ok(())
}

fn theorem_check(draws: usize, seed: u64, violate: bool, exec: Execution) -> Result<(), Failure> {
    if draws == 0 {
        return Err(Failure::Usage("--draws must be at least 1".into()));
    }
    let ordering = if violate {
        LethalityOrdering::EarlyMoreLethal
    } else {
        LethalityOrdering::LateMoreLethal
    };
    let r = check_theorem2(draws, seed, ordering, exec).map_err(|e| anyhow!(e))?;
    if violate {
        println!(
            "draws={} assumption_holds=false min_A={} min_B={} min_cov12={} (no sign claimed)",
            r.draws,
            sig6(r.min_a),
            sig6(r.min_b),
            sig6(r.min_cov12)
        );
    } else {
        println!(
            "draws={} min_A={} min_B={} min_cov12={} exceptions={} {}",
            r.draws,
            sig6(r.min_a),
            sig6(r.min_b),
            sig6(r.min_cov12),
            r.exceptions,
            if r.passed() { "PASS" } else { "FAIL" }
        );
    }
    Ok(())
}

fn analyze(cli: &Cli) -> Result<(), Failure> {
    let Command::Analyze { csv, rho, alpha, points, svg } = &cli.command else {
        unreachable!()
    };
    let file = fs::File::open(csv)
        .with_context(|| format!("opening {}", csv.display()))
        .map_err(|e| Failure::Usage(format!("{e:#}")))?;
    let records = read_trial_summaries(file).map_err(|e| Failure::Usage(format!("{}: {e}", csv.display())))?;
    let analysis = analyze_meta(&records, rho, *alpha).map_err(|e| anyhow!(e))?;

    let mut out = Outputs::new(&cli.out, cli.force);
    out.add(
        "analyze_fit.json",
        serde_json::to_string_pretty(&analysis.to_json_value()).map_err(|e| anyhow!(e))? + "\n",
    );
    out.add("analyze_fit.csv", analysis.fit.to_csv());
    for panel in &analysis.panels {
        let rho_token = file_token(&sig6(panel.rho));
        for (trial, region) in &panel.regions {
            let mut buf = Vec::new();
            write_boundary_csv(trial, region, *points, &mut buf).map_err(|e| anyhow!(e))?;
            out.add(format!("ellipse_{}_rho{rho_token}.csv", file_token(trial)), buf);
        }
        if *svg {
            let entries: Vec<PanelEntry<'_>> = panel
                .regions
                .iter()
                .map(|(label, region)| PanelEntry { label, region })
                .collect();
            let title = format!("{}% regions, rho = {}", sig6(100.0 * (1.0 - alpha)), sig6(panel.rho));
            let doc = render_panel_svg(&title, &entries, Some((analysis.fit.beta0_hat, analysis.fit.beta1_hat)))
                .map_err(|e| anyhow!(e))?;
            out.add(format!("panel_rho{rho_token}.svg"), doc);
        }
    }
    let written = out.commit()?;

    println!("threshold (alpha={}): {:.6}", sig6(*alpha), analysis.threshold);
    println!(
        "trials used: {}, rejected: {}",
        analysis.trials.len(),
        analysis.rejected.len()
    );
    for (id, why) in &analysis.rejected {
        println!("  rejected {id}: {why}");
    }
    for t in &analysis.trials {
        println!(
            "  {}: S_hat={} M_hat={}{}",
            t.trial_id,
            sig6(t.estimate.s_hat),
            sig6(t.estimate.m_hat),
            if t.low_count { " [low-count]" } else { "" }
        );
    }
    let f = &analysis.fit;
    println!(
        "slope={} se={} t={} p={} r={}",
        sig6(f.beta1_hat),
        sig6(f.se_beta1),
        sig6(f.t_stat),
        sig6(f.p_value),
        f.r_pearson.map(sig6).unwrap_or_else(|| "-".into())
    );
    println!("wrote {} files to {}", written.len(), cli.out.display());
    Ok(())
}

fn scenarios(json: bool, covariance: bool, n: u64, m: u64) -> Result<(), Failure> {
    let registry = ScenarioRegistry::default();
    if covariance {
        let summaries = registry
            .default_set()
            .iter()
            .map(|p| covariance_summary(p, n, m))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| anyhow!(e))?;
        println!("{}", serde_json::to_string_pretty(&summaries).map_err(|e| anyhow!(e))?);
        return Ok(());
    }
    if json {
        println!("{}", registry.to_json());
        return Ok(());
    }
    for (set, params) in [("printed", &registry.printed), ("reconstructed", &registry.reconstructed)] {
        println!("{set}:");
        println!(
            "  {:<11} {:<8} {:>8} {:>8} {:>8} {:>10} {:>9} {:>9}",
            "", "arm", "pE", "pL", "pDgE", "pDgL", "S", "M"
        );
        for p in params.iter() {
            let e = derive_endpoints(p).map_err(|e| anyhow!(e))?;
            for (i, (arm, a)) in [("control", &p.control), ("screen", &p.screen)].into_iter().enumerate() {
                let (label, s, mm) = if i == 0 {
                    (p.label.as_str(), sig6(e.s), sig6(e.m))
                } else {
                    ("", String::new(), String::new())
                };
                println!(
                    "  {:<11} {:<8} {:>8} {:>8} {:>8} {:>10} {:>9} {:>9}",
                    label,
                    arm,
                    sig6(a.p_early),
                    sig6(a.p_late),
                    sig6(a.p_death_given_early),
                    sig6(a.p_death_given_late),
                    s,
                    mm
                );
            }
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match &cli.command {
        Command::Simulate { .. } => simulate(cli, exec),
        Command::Table2 { seed } => table2(cli, *seed, exec),
        Command::TheoremCheck { draws, seed, violate } => theorem_check(*draws, *seed, *violate, exec),
        Command::Analyze { .. } => analyze(cli),
        Command::Scenarios { json, covariance, n, m } => scenarios(*json, *covariance, *n, *m),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
