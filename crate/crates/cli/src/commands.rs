use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use stereokin::bandmap::{self, fit_populations, PopulationFitOptions};
use stereokin::channels::{classify_lowest_channel, enumerate_channels, ChannelLabel, PairConfiguration};
use stereokin::config::ExperimentConfig;
use stereokin::constants::{scaled_temperature, BOLTZMANN};
use stereokin::fitting::{fit_dual_curves, fit_single_beta, synthesize_dataset, ModelKind, RateFit, TimeSeries};
use stereokin::gasmodel::{
    average_2d_density, boltzmann_occupancy, effective_layer_number, gaussian_layer_stack_default,
    layer_width_for_alpha, parametric_transfer, peak_layer_density, transfer_for_ground_fraction,
    VibrationalDistribution,
};
use stereokin::kinetics::{
    convert_beta_3d_to_2d, effective_initial_rate, integrate_loss, simulate_layer_resolved, LevelDensities,
    RateConstants, RateMatrix, DEFAULT_REL_TOL,
};
use stereokin::scattering::dipole_scan;
use stereokin::{io, units};

use crate::output::{gnuplot_script, sibling, write_json, write_text, Manifest, Table};
use crate::{CliError, Format, Global, Mode};

type CliResult = Result<(), CliError>;

/// Prints to stdout, treating a closed pipe as success.
fn stdout(text: &str) {
    use std::io::Write;
    let mut lock = std::io::stdout().lock();
    let _ = lock.write_all(text.as_bytes()).and_then(|_| lock.flush());
}

fn load_config(g: &Global) -> Result<ExperimentConfig, CliError> {
    match &g.config {
        Some(p) => Ok(ExperimentConfig::load(p)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn manifest_for<'a>(name: &'a str, g: &Global, cfg: Option<&ExperimentConfig>) -> Manifest<'a> {
    let mut m = Manifest::new(name, g.seed);
    m.config = cfg.map(|c| c.to_file());
    if let Some(p) = &g.config {
        m.input(p);
    }
    m
}

/// Writes the table to `--out` (or stdout) in the selected format.
fn emit_table(g: &Global, table: &Table, manifest: &mut Manifest) -> Result<Option<PathBuf>, CliError> {
    let text = match g.format {
        Format::Csv => table.to_csv(),
        Format::Json => {
            let mut s =
                serde_json::to_string_pretty(&table.to_json()).map_err(|e| CliError::numerical(e.to_string()))?;
            s.push('\n');
            s
        }
    };
    match &g.out {
        Some(p) => {
            write_text(p, &text)?;
            manifest.output(p);
            Ok(Some(p.clone()))
        }
        None => {
            stdout(&text);
            Ok(None)
        }
    }
}

fn distribution(
    cfg: &ExperimentConfig,
    v_cut: usize,
    parametric: Option<f64>,
    ground_fraction: Option<f64>,
) -> Result<(VibrationalDistribution, Option<f64>), CliError> {
    let thermal = boltzmann_occupancy(cfg.temperature, cfg.trap.nu_z, v_cut)?;
    let p = match (parametric, ground_fraction) {
        (Some(p), _) => Some(p),
        (None, Some(g)) => Some(transfer_for_ground_fraction(&thermal, g)?),
        (None, None) => None,
    };
    match p {
        Some(p) => Ok((parametric_transfer(&thermal, p)?, Some(p))),
        None => Ok((thermal, None)),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RatesFile {
    beta2_cm2_per_s: f64,
    beta3_cm2_per_s: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON file with `beta2_cm2_per_s` and `beta3_cm2_per_s`.
    #[arg(long)]
    rates: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-5)]
    beta2_cm2_per_s: f64,
    #[arg(long, default_value_t = 1e-6)]
    beta3_cm2_per_s: f64,
    /// Effective layer number used for the initial average density.
    #[arg(long, default_value_t = 30.0)]
    alpha: f64,
    /// Hold time; five initial decay times when omitted.
    #[arg(long)]
    t_end_s: Option<f64>,
    #[arg(long, default_value_t = 60)]
    points: usize,
    /// Fraction of v=0 moved to v=2 by parametric heating.
    #[arg(long)]
    parametric: Option<f64>,
    /// Heat until this ground-level fraction is reached.
    #[arg(long, conflicts_with = "parametric")]
    ground_fraction: Option<f64>,
    #[arg(long, default_value_t = 2)]
    v_cut: usize,
    /// Multiplicative Gaussian noise for the synthetic dataset.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Also write a synthetic dataset (t_s, n_cm2, sigma_cm2).
    #[arg(long)]
    dataset_out: Option<PathBuf>,
    /// Integrate every lattice layer and report alpha(t).
    #[arg(long)]
    layer_resolved: bool,
    /// Initial effective layer number of the Gaussian stack.
    #[arg(long, default_value_t = 23.0)]
    alpha0: f64,
    /// Write a gnuplot script next to the output.
    #[arg(long)]
    gnuplot: bool,
}

pub fn simulate(g: &Global, a: &SimulateArgs) -> CliResult {
    let cfg = load_config(g)?;
    let mut manifest = manifest_for("simulate", g, Some(&cfg));
    let (b2, b3) = match &a.rates {
        Some(p) => {
            manifest.input(p);
            let text = std::fs::read_to_string(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
            let r: RatesFile =
                serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
            (r.beta2_cm2_per_s, r.beta3_cm2_per_s)
        }
        None => (a.beta2_cm2_per_s, a.beta3_cm2_per_s),
    };
    let rc = RateConstants::new(0.0, units::cm2_per_s(b2), units::cm2_per_s(b3))?;
    if a.points < 2 {
        return Err(CliError::input("--points must be at least 2"));
    }
    let (dist, _) = distribution(&cfg, a.v_cut, a.parametric, a.ground_fraction)?;
    let rates = RateMatrix::from_channels(dist.levels(), rc.beta2, rc.beta3);
    let sigma_r = cfg.radial_size()?;
    let n0 = average_2d_density(cfg.total_molecules, sigma_r, a.alpha)?;
    let t_end = match a.t_end_s {
        Some(t) if t > 0.0 => t,
        Some(t) => return Err(CliError::input(format!("--t-end-s must be positive, got {t}"))),
        None => {
            let b = effective_initial_rate(&dist, rc.beta2, rc.beta3);
            if b <= 0.0 {
                return Err(CliError::input("all rates are zero; pass --t-end-s"));
            }
            5.0 / (b * n0)
        }
    };
    let times: Vec<f64> = (0..a.points).map(|i| t_end * i as f64 / (a.points - 1) as f64).collect();
    let start = LevelDensities::from_distribution(n0, &dist)?;
    let traj = integrate_loss(&start, &rates, &times, DEFAULT_REL_TOL, 1e-12 * n0)?;

    let mut headers = vec!["t_s".to_string()];
    headers.extend((0..dist.levels()).map(|v| format!("n{v}_cm2")));
    headers.push("n_tot_cm2".into());
    let mut table = Table { headers, rows: Vec::new() };
    for s in &traj.samples {
        let mut row = vec![s.time];
        row.extend(s.densities.iter().map(|&n| units::to_per_cm2(n)));
        row.push(units::to_per_cm2(s.total()));
        table.push(row);
    }
    let out = emit_table(g, &table, &mut manifest)?;

    if let Some(p) = &a.dataset_out {
        let ts = synthesize_dataset("simulated", &rates, &dist, n0, &times, a.noise, g.seed)?;
        io::write_time_series(p, &ts)?;
        manifest.output(p);
    }
    if a.layer_resolved {
        let Some(out) = &out else {
            return Err(CliError::input("--layer-resolved needs --out"));
        };
        let stack = gaussian_layer_stack_default(cfg.total_molecules, layer_width_for_alpha(a.alpha0)?)?;
        let sim = simulate_layer_resolved(&stack, &dist, &rates, sigma_r, &times)?;
        let mut layers = Table::new(&["t_s", "alpha", "molecules"]);
        for (k, t) in sim.times.iter().enumerate() {
            layers.push(vec![*t, sim.alpha[k], sim.numbers.iter().map(|n| n[k]).sum()]);
        }
        let path = sibling(out, "layers.csv");
        write_text(&path, &layers.to_csv())?;
        manifest.output(&path);
        stdout(&format!("time_averaged_alpha = {:.4}\n", sim.time_averaged_alpha));
    }
    if let Some(out) = &out {
        if a.gnuplot && g.format == Format::Csv {
            let n = dist.levels();
            let mut ys: Vec<(usize, String)> = (0..n).map(|v| (v + 2, format!("n{v}"))).collect();
            ys.push((n + 2, "n_tot".into()));
            let ys: Vec<(usize, &str)> = ys.iter().map(|(c, s)| (*c, s.as_str())).collect();
            let gp = sibling(out, "gp");
            write_text(&gp, &gnuplot_script(out, "level densities (cm^-2)", (1, "t (s)"), &ys, true))?;
            manifest.output(&gp);
        }
        manifest.write(out)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Thermal loss curve (t_s, n_cm2, sigma_cm2).
    #[arg(long)]
    thermal: Option<PathBuf>,
    /// Parametrically heated loss curve.
    #[arg(long)]
    heated: Option<PathBuf>,
    /// Fit one curve with n0 / (1 + beta n0 t) instead.
    #[arg(long, conflicts_with_all = ["thermal", "heated"])]
    single: Option<PathBuf>,
    /// Ground-level fraction of the heated gas.
    #[arg(long, default_value_t = 0.5)]
    heated_ground_fraction: f64,
    /// Explicit thermal level fractions, comma separated.
    #[arg(long, value_delimiter = ',')]
    thermal_fractions: Option<Vec<f64>>,
    /// Explicit heated level fractions, comma separated.
    #[arg(long, value_delimiter = ',')]
    heated_fractions: Option<Vec<f64>>,
    #[arg(long, default_value_t = 2)]
    v_cut: usize,
}

#[derive(Debug, Serialize)]
struct ParameterReport {
    name: String,
    estimate: f64,
    std_error: f64,
    ci95: [f64; 2],
}

#[derive(Debug, Serialize)]
struct FitReport {
    model: String,
    parameters: Vec<ParameterReport>,
    /// Same order and units as `parameters`.
    covariance: Vec<Vec<f64>>,
    chi_square: f64,
    reduced_chi_square: f64,
    degrees_of_freedom: usize,
    iterations: usize,
    gradient_norm: f64,
    condition_number: f64,
    converged: bool,
    termination: stereokin::lm::Termination,
    #[serde(skip_serializing_if = "Option::is_none")]
    initial_guess_cm2_per_s: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fractions: Option<[Vec<f64>; 2]>,
}

fn report(fit: &RateFit, labels: &[&str]) -> FitReport {
    let factor = |name: &str| {
        if name.starts_with("beta") {
            units::to_cm2_per_s(1.0)
        } else {
            units::to_per_cm2(1.0)
        }
    };
    let factors: Vec<f64> = fit.names.iter().map(|n| factor(n)).collect();
    let parameters = fit
        .names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let name = if n.starts_with("beta") {
                format!("{n}_cm2_per_s")
            } else {
                format!("n0_{}_cm2", labels[i - (fit.names.len() - labels.len())])
            };
            let (e, s) = (fit.estimates[i] * factors[i], fit.std_errors[i] * factors[i]);
            ParameterReport { name, estimate: e, std_error: s, ci95: [e - 1.96 * s, e + 1.96 * s] }
        })
        .collect();
    let covariance = fit
        .covariance
        .iter()
        .enumerate()
        .map(|(i, row)| row.iter().enumerate().map(|(j, c)| c * factors[i] * factors[j]).collect())
        .collect();
    FitReport {
        model: match fit.model {
            ModelKind::LevelResolved => "level-resolved",
            ModelKind::SingleBeta => "single-beta",
        }
        .to_string(),
        parameters,
        covariance,
        chi_square: fit.chi_square,
        reduced_chi_square: fit.reduced_chi_square,
        degrees_of_freedom: fit.degrees_of_freedom,
        iterations: fit.iterations,
        gradient_norm: fit.gradient_norm,
        condition_number: fit.condition_number,
        converged: fit.converged,
        termination: fit.termination,
        initial_guess_cm2_per_s: None,
        fractions: None,
    }
}

fn fractions_or(
    explicit: &Option<Vec<f64>>,
    fallback: VibrationalDistribution,
) -> Result<VibrationalDistribution, CliError> {
    match explicit {
        Some(f) => Ok(VibrationalDistribution::new(f.clone())?),
        None => Ok(fallback),
    }
}

/// Starting rates from single-rate fits of each curve: each apparent rate
/// is `beta3 S + beta2 (1 - S)` with `S` the same-level probability.
fn initial_rates(
    a: &TimeSeries,
    b: &TimeSeries,
    da: &VibrationalDistribution,
    db: &VibrationalDistribution,
) -> [f64; 2] {
    let apparent = |ts: &TimeSeries| -> f64 {
        fit_single_beta(ts).ok().and_then(|f| f.estimate("beta1")).filter(|b| *b > 0.0).unwrap_or_else(|| {
            let s = ts.samples();
            let (first, last) = (s[0], s[s.len() - 1]);
            ((1.0 / last.n.max(f64::MIN_POSITIVE) - 1.0 / first.n.max(f64::MIN_POSITIVE)) / (last.t - first.t)).abs()
        })
    };
    let (ra, rb) = (apparent(a), apparent(b));
    let (sa, sb) = (da.same_level_probability(), db.same_level_probability());
    let mean = 0.5 * (ra + rb);
    let det = sa * (1.0 - sb) - sb * (1.0 - sa);
    if det.abs() > 1e-6 {
        let b3 = (ra * (1.0 - sb) - rb * (1.0 - sa)) / det;
        let b2 = (sa * rb - sb * ra) / det;
        if b2 > 0.0 && b3 > 0.0 {
            return [b2, b3];
        }
        return [b2.max(1e-3 * mean).max(mean), b3.max(1e-2 * mean)];
    }
    [mean, mean]
}

pub fn fit(g: &Global, a: &FitArgs) -> CliResult {
    let cfg = load_config(g)?;
    let mut manifest = manifest_for("fit", g, Some(&cfg));
    let (fit, rep) = if let Some(path) = &a.single {
        manifest.input(path);
        let ts = io::read_time_series(path, "single")?;
        let fit = fit_single_beta(&ts)?;
        let rep = report(&fit, &["single"]);
        (fit, rep)
    } else {
        let (Some(tp), Some(hp)) = (&a.thermal, &a.heated) else {
            return Err(CliError::input("fit needs --thermal and --heated, or --single"));
        };
        manifest.input(tp);
        manifest.input(hp);
        let th = io::read_time_series(tp, "thermal")?;
        let he = io::read_time_series(hp, "heated")?;
        let thermal = boltzmann_occupancy(cfg.temperature, cfg.trap.nu_z, a.v_cut)?;
        let p = transfer_for_ground_fraction(&thermal, a.heated_ground_fraction)?;
        let heated = fractions_or(&a.heated_fractions, parametric_transfer(&thermal, p)?)?;
        let thermal = fractions_or(&a.thermal_fractions, thermal)?;
        let init = initial_rates(&th, &he, &thermal, &heated);
        let fit = fit_dual_curves(&th, &he, &thermal, &heated, &RateConstants::new(0.0, init[0], init[1])?)?;
        let mut rep = report(&fit, &["thermal", "heated"]);
        rep.initial_guess_cm2_per_s = Some([units::to_cm2_per_s(init[0]), units::to_cm2_per_s(init[1])]);
        rep.fractions = Some([thermal.fractions().to_vec(), heated.fractions().to_vec()]);
        (fit, rep)
    };
    match &g.out {
        Some(p) => {
            write_json(p, &rep)?;
            manifest.output(p);
            manifest.write(p)?;
        }
        None => stdout(&format!(
            "{}\n",
            serde_json::to_string_pretty(&rep).map_err(|e| CliError::numerical(e.to_string()))?
        )),
    }
    if !fit.converged {
        return Err(CliError::not_converged(format!(
            "fit did not converge after {} iterations ({:?})",
            fit.iterations, fit.termination
        )));
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Debye.
    #[arg(long, default_value_t = 0.0)]
    d_min: f64,
    /// Debye.
    #[arg(long, default_value_t = 0.2)]
    d_max: f64,
    #[arg(long, default_value_t = 21)]
    points: usize,
    /// Collision energy; the configured temperature when omitted.
    #[arg(long)]
    temperature_nk: Option<f64>,
    /// Slope window in debye; defaults to the positive part of the grid.
    #[arg(long)]
    window_min: Option<f64>,
    #[arg(long)]
    window_max: Option<f64>,
    /// Absorbing radius in nm.
    #[arg(long, default_value_t = 1.0)]
    r_abs_nm: f64,
    #[arg(long)]
    gnuplot: bool,
}

#[derive(Debug, Serialize)]
struct SlopeSummary {
    channel: u8,
    mode: &'static str,
    temperature_nk: f64,
    window_debye: [f64; 2],
    window_points: usize,
    slope: f64,
}

pub fn scan_dipole(g: &Global, a: &ScanArgs) -> CliResult {
    if a.points < 5 {
        return Err(CliError::input(format!("--points must be at least 5, got {}", a.points)));
    }
    if !(a.d_min >= 0.0 && a.d_min < a.d_max) {
        return Err(CliError::input(format!("invalid dipole range [{}, {}] D", a.d_min, a.d_max)));
    }
    let cfg = load_config(g)?;
    let mut manifest = manifest_for("scan-dipole", g, Some(&cfg));
    let channel = ChannelLabel::from_index(g.channel).ok_or_else(|| CliError::input("channel must be 1, 2 or 3"))?;
    let t_gas = a.temperature_nk.map(units::nanokelvin).unwrap_or(cfg.temperature);
    let grid_d: Vec<f64> =
        (0..a.points).map(|i| a.d_min + (a.d_max - a.d_min) * i as f64 / (a.points - 1) as f64).collect();
    let first_positive = grid_d.iter().copied().find(|&d| d > 0.0).unwrap_or(a.d_max);
    let window = (a.window_min.unwrap_or(first_positive), a.window_max.unwrap_or(a.d_max));
    let grid: Vec<f64> = grid_d.iter().map(|&d| units::debye(d)).collect();
    let scan = dipole_scan(
        channel,
        &grid,
        cfg.reduced_mass(),
        cfg.molecule.c6,
        t_gas,
        units::nanometer(a.r_abs_nm),
        (units::debye(window.0), units::debye(window.1)),
    )?;
    let a_ho = cfg.a_ho()?;
    let beta_header = match g.mode {
        Mode::ThreeD => "beta_cm3_per_s",
        Mode::TwoD => "beta_cm2_per_s",
    };
    let mut table = Table::new(&["d_debye", beta_header, "barrier_uK", "in_window"]);
    for (d, pt) in grid_d.iter().zip(&scan.points) {
        let beta = match g.mode {
            Mode::ThreeD => units::to_cm3_per_s(pt.beta),
            Mode::TwoD => units::to_cm2_per_s(convert_beta_3d_to_2d(pt.beta, a_ho)?),
        };
        let barrier = units::to_microkelvin(pt.barrier.height / BOLTZMANN);
        table.push(vec![*d, beta, barrier, if pt.in_window { 1.0 } else { 0.0 }]);
    }
    let summary = SlopeSummary {
        channel: g.channel,
        mode: if g.mode == Mode::ThreeD { "3d" } else { "2d" },
        temperature_nk: units::to_nanokelvin(t_gas),
        window_debye: [window.0, window.1],
        window_points: scan.window_points,
        slope: scan.slope,
    };
    match emit_table(g, &table, &mut manifest)? {
        Some(out) => {
            let path = sibling(&out, "slope.json");
            write_json(&path, &summary)?;
            manifest.output(&path);
            if a.gnuplot && g.format == Format::Csv {
                let gp = sibling(&out, "gp");
                write_text(&gp, &gnuplot_script(&out, "rate vs induced dipole", (1, "d (D)"), &[(2, "beta")], true))?;
                manifest.output(&gp);
            }
            manifest.write(&out)?;
        }
        None => eprintln!("slope = {:.4} over {} points", scan.slope, scan.window_points),
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct OccupancyArgs {
    /// Overrides the configured temperature.
    #[arg(long)]
    temperature_nk: Option<f64>,
    #[arg(long, default_value_t = 2)]
    v_cut: usize,
    #[arg(long)]
    parametric: Option<f64>,
    #[arg(long, conflicts_with = "parametric")]
    ground_fraction: Option<f64>,
}

#[derive(Debug, Serialize)]
struct OccupancySummary {
    temperature_nk: f64,
    nu_z_hz: f64,
    scaled_temperature: f64,
    transfer_probability: Option<f64>,
    fractions: Vec<f64>,
    same_level_probability: f64,
}

pub fn occupancy(g: &Global, a: &OccupancyArgs) -> CliResult {
    let mut cfg = load_config(g)?;
    if let Some(t) = a.temperature_nk {
        cfg.temperature = units::nanokelvin(t);
        cfg.validate()?;
    }
    let mut manifest = manifest_for("occupancy", g, Some(&cfg));
    let (dist, p) = distribution(&cfg, a.v_cut, a.parametric, a.ground_fraction)?;
    let summary = OccupancySummary {
        temperature_nk: units::to_nanokelvin(cfg.temperature),
        nu_z_hz: cfg.trap.nu_z,
        scaled_temperature: scaled_temperature(cfg.temperature, cfg.trap.nu_z)?,
        transfer_probability: p,
        fractions: dist.fractions().to_vec(),
        same_level_probability: dist.same_level_probability(),
    };
    if g.format == Format::Json {
        return write_summary(g, &summary, &mut manifest);
    }
    let mut table = Table::new(&["v", "fraction"]);
    for (v, f) in dist.fractions().iter().enumerate() {
        table.push(vec![v as f64, *f]);
    }
    if let Some(out) = emit_table(g, &table, &mut manifest)? {
        manifest.write(&out)?;
    }
    Ok(())
}

fn write_summary<T: Serialize>(g: &Global, value: &T, manifest: &mut Manifest) -> CliResult {
    match &g.out {
        Some(p) => {
            write_json(p, value)?;
            manifest.output(p);
            manifest.write(p)?;
        }
        None => stdout(&format!(
            "{}\n",
            serde_json::to_string_pretty(value).map_err(|e| CliError::numerical(e.to_string()))?
        )),
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct CloudArgs {
    /// Effective layer number of the initial Gaussian stack.
    #[arg(long, default_value_t = 23.0)]
    alpha0: f64,
    /// Time-averaged layer number for the average density.
    #[arg(long, default_value_t = 30.0)]
    alpha: f64,
}

#[derive(Debug, Serialize)]
struct CloudSummary {
    total_molecules: f64,
    sigma_r_um: f64,
    layer_width: f64,
    alpha0: f64,
    peak_layer_molecules: f64,
    peak_layer_density_cm2: f64,
    average_density_alpha0_cm2: f64,
    average_density_alpha_cm2: f64,
    a_ho_nm: f64,
    layers: Vec<(i32, f64)>,
}

pub fn cloud(g: &Global, a: &CloudArgs) -> CliResult {
    let cfg = load_config(g)?;
    let mut manifest = manifest_for("cloud", g, Some(&cfg));
    let sigma = cfg.radial_size()?;
    let w = layer_width_for_alpha(a.alpha0)?;
    let stack = gaussian_layer_stack_default(cfg.total_molecules, w)?;
    let summary = CloudSummary {
        total_molecules: cfg.total_molecules,
        sigma_r_um: sigma * 1e6,
        layer_width: w,
        alpha0: effective_layer_number(&stack)?,
        peak_layer_molecules: stack.peak(),
        peak_layer_density_cm2: units::to_per_cm2(peak_layer_density(stack.peak(), sigma)?),
        average_density_alpha0_cm2: units::to_per_cm2(average_2d_density(cfg.total_molecules, sigma, a.alpha0)?),
        average_density_alpha_cm2: units::to_per_cm2(average_2d_density(cfg.total_molecules, sigma, a.alpha)?),
        a_ho_nm: units::to_nanometer(cfg.a_ho()?),
        layers: stack.layers.clone(),
    };
    if g.format == Format::Json {
        return write_summary(g, &summary, &mut manifest);
    }
    let mut table = Table::new(&["layer", "molecules", "peak_density_cm2"]);
    for &(j, n) in &stack.layers {
        table.push(vec![j as f64, n, units::to_per_cm2(peak_layer_density(n, sigma)?)]);
    }
    if let Some(out) = emit_table(g, &table, &mut manifest)? {
        let path = sibling(&out, "summary.json");
        write_json(&path, &CloudSummary { layers: Vec::new(), ..summary })?;
        manifest.output(&path);
        manifest.write(&out)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ChannelsArgs {
    /// Both molecules in the same internal state.
    #[arg(long)]
    same_state: bool,
    #[arg(long, default_value_t = 0)]
    v1: u32,
    #[arg(long, default_value_t = 0)]
    v2: u32,
    #[arg(long, default_value_t = 1)]
    l_max: u32,
    #[arg(long, default_value_t = 1)]
    m_max: u32,
}

#[derive(Debug, Serialize)]
struct ChannelsSummary {
    pair: PairConfiguration,
    lowest: String,
    allowed: Vec<stereokin::channels::ChannelQuantumNumbers>,
}

pub fn channels(g: &Global, a: &ChannelsArgs) -> CliResult {
    let pair = PairConfiguration::new(a.same_state, a.v1, a.v2);
    let allowed = enumerate_channels(&pair, a.l_max, a.m_max);
    let lowest = classify_lowest_channel(&pair);
    let mut manifest = manifest_for("channels", g, None);
    if g.format == Format::Json {
        let summary = ChannelsSummary { pair, lowest: lowest.to_string(), allowed };
        return write_summary(g, &summary, &mut manifest);
    }
    let mut text = format!(
        "pair: {} internal state, v1={}, v2={}\nlowest channel: {lowest}\n\n{:>4} {:>3} {:>6} {:>3}  label\n",
        if a.same_state { "same" } else { "different" },
        a.v1,
        a.v2,
        "eta",
        "L",
        "gamma",
        "M"
    );
    for q in &allowed {
        let label = ChannelLabel::from_quantum_numbers(q).map(|l| l.to_string()).unwrap_or_default();
        text.push_str(&format!("{:>4} {:>3} {:>6} {:>3}  {label}\n", q.eta.value(), q.l, q.gamma.value(), q.m));
    }
    match &g.out {
        Some(p) => {
            write_text(p, &text)?;
            manifest.output(p);
            manifest.write(p)?;
        }
        None => stdout(&text),
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct BandmapArgs {
    /// OD image: CSV matrix or STKODIM1 binary.
    #[arg(long, conflicts_with = "trace")]
    image: Option<PathBuf>,
    /// Momentum trace CSV (p_hbark, od).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// hbar k per pixel along the momentum axis.
    #[arg(long, default_value_t = 0.1)]
    calibration: f64,
    #[arg(long, default_value_t = 1.0)]
    pixel_size_um: f64,
    /// Averaging half-width in rows; the fitted rms width when omitted.
    #[arg(long)]
    rms_width: Option<f64>,
    /// Hold the resolution fixed (pixels).
    #[arg(long)]
    fixed_sigma_px: Option<f64>,
    #[arg(long)]
    initial_sigma_px: Option<f64>,
}

#[derive(Debug, Serialize)]
struct BandmapReport {
    fractions: [f64; 3],
    uncertainties: [f64; 3],
    sigma_hbark: f64,
    sigma_px: f64,
    sigma_fixed: bool,
    amplitude: f64,
    offset: f64,
    center_hbark: f64,
    residual_norm: f64,
    iterations: usize,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    transverse_center_px: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    transverse_rms_px: Option<f64>,
}

pub fn bandmap(g: &Global, a: &BandmapArgs) -> CliResult {
    let mut manifest = manifest_for("bandmap", g, None);
    let mut transverse = None;
    let trace = match (&a.image, &a.trace) {
        (Some(p), _) => {
            manifest.input(p);
            let img = io::read_image(p, a.pixel_size_um * 1e-6, a.calibration)?;
            let prof = bandmap::transverse_profile(&img);
            let width = a.rms_width.unwrap_or(prof.rms_width);
            transverse = Some((prof.center, width));
            bandmap::transverse_average(&img, width)?
        }
        (None, Some(p)) => {
            manifest.input(p);
            io::read_trace(p)?
        }
        (None, None) => return Err(CliError::input("bandmap needs --image or --trace")),
    };
    let opts = PopulationFitOptions {
        fixed_sigma: a.fixed_sigma_px.map(|s| s * a.calibration),
        initial_sigma: a.initial_sigma_px.map(|s| s * a.calibration),
    };
    let pops = fit_populations(&trace, &opts)?;
    let rep = BandmapReport {
        fractions: pops.fractions,
        uncertainties: pops.uncertainties,
        sigma_hbark: pops.model.sigma,
        sigma_px: pops.model.sigma / a.calibration,
        sigma_fixed: opts.fixed_sigma.is_some(),
        amplitude: pops.model.amplitude,
        offset: pops.model.offset,
        center_hbark: pops.model.center,
        residual_norm: pops.residual_norm,
        iterations: pops.iterations,
        converged: pops.converged,
        transverse_center_px: transverse.map(|t| t.0),
        transverse_rms_px: transverse.map(|t| t.1),
    };
    if let Some(out) = &g.out {
        let model: Vec<f64> = trace.momentum().iter().map(|&p| pops.model.evaluate(p)).collect();
        let overlay = sibling(out, "overlay.csv");
        io::write_trace(&overlay, &trace, Some(&model))?;
        manifest.output(&overlay);
    }
    write_summary(g, &rep, &mut manifest)?;
    if !pops.converged {
        return Err(CliError::not_converged("population fit did not converge"));
    }
    Ok(())
}
