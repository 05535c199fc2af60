use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use mfa_core::dyadic::CoefficientTree;
use mfa_core::dyadic::{dwt_front_end, read_tree, write_tree, TreeFormat, WaveletFilter};
use mfa_core::largedev::{
    empirical_spectrum, estimate_scaling, Aggregation, ScaleWindow, ScalingMethod, SpectrumOptions,
};
use mfa_core::numeric::{inv_p, linspace};
use mfa_core::rws::{
    asymptotics, sample, theoretical_spectrum, validate_montecarlo, Atom, Family, ScaleDistributionSpec, Tolerances,
    ValidationOptions,
};
use mfa_core::snu::{associated_rws, membership_diagnostic, p_nu, AdmissibleProfile, DEFAULT_GRID_POINTS};
use mfa_core::MfaError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::config::resolve;
use crate::{CliError, Format, Globals};

type Config<'a> = Option<&'a Map<String, Value>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyArg {
    Lacunary,
    Discrete,
    Associated,
}

/// Ways to name a scale distribution. A `--spec` file wins over
/// `--profile`, which wins over `--family`.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct SpecArgs {
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Discrete atoms as `alpha:eta` pairs, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub atoms: Option<String>,
    /// JSON admissible profile; selects the associated series.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Knots of the associated-series grid.
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Attach random signs.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub signs: Option<bool>,
    /// JSON scale distribution spec.
    #[arg(long = "spec")]
    pub spec_file: Option<PathBuf>,
}

impl SpecArgs {
    fn is_empty(&self) -> bool {
        self.family.is_none() && self.profile.is_none() && self.spec_file.is_none()
    }

    fn profile(&self) -> Result<Option<AdmissibleProfile>, CliError> {
        self.profile.as_deref().map(read_json).transpose()
    }

    fn build(&self) -> Result<ScaleDistributionSpec, CliError> {
        let spec = if let Some(path) = &self.spec_file {
            let spec: ScaleDistributionSpec = read_json(path)?;
            spec.check_family()?;
            spec
        } else if let Some(profile) = self.profile()? {
            associated_rws(&profile, self.grid_points.unwrap_or(DEFAULT_GRID_POINTS))?
        } else {
            match self.family {
                None => return Err(CliError::Config("no distribution given (--family, --profile or --spec)".into())),
                Some(FamilyArg::Lacunary) => {
                    let (Some(alpha), Some(eta)) = (self.alpha, self.eta) else {
                        return Err(CliError::Config("the lacunary family needs --alpha and --eta".into()));
                    };
                    ScaleDistributionSpec::lacunary(alpha, eta)?
                }
                Some(FamilyArg::Discrete) => {
                    let text = self
                        .atoms
                        .as_deref()
                        .ok_or_else(|| CliError::Config("the discrete family needs --atoms".into()))?;
                    ScaleDistributionSpec::discrete(parse_atoms(text)?)?
                }
                Some(FamilyArg::Associated) => {
                    return Err(CliError::Config("the associated family needs --profile".into()))
                }
            }
        };
        Ok(match self.signs {
            Some(s) => spec.with_signs(s),
            None => spec,
        })
    }
}

fn parse_atoms(text: &str) -> Result<Vec<Atom>, CliError> {
    text.split(',')
        .map(|pair| {
            let (a, e) = pair
                .split_once(':')
                .ok_or_else(|| CliError::Config(format!("atom '{pair}' is not of the form alpha:eta")))?;
            let num = |s: &str| {
                s.trim().parse::<f64>().map_err(|_| CliError::Config(format!("bad number '{s}' in atom '{pair}'")))
            };
            Ok(Atom { alpha: num(a)?, eta: num(e)? })
        })
        .collect()
}

/// `inf` (or `infinity`) selects the Hölder case.
fn parse_p(s: &str) -> Result<f64, CliError> {
    let t = s.trim().to_ascii_lowercase();
    let p = match t.trim_start_matches('+') {
        "inf" | "infinity" => f64::INFINITY,
        v => v.parse().map_err(|_| CliError::Config(format!("bad p '{s}'")))?,
    };
    if !(p > 0.0) {
        return Err(CliError::Config(format!("p must be positive, got {s}")));
    }
    Ok(p)
}

fn parse_ps(list: &[String]) -> Result<Vec<f64>, CliError> {
    if list.is_empty() {
        return Err(CliError::Config("empty p list".into()));
    }
    list.iter().map(|s| parse_p(s)).collect()
}

fn p_tag(p: f64) -> String {
    if p.is_infinite() {
        "pinf".into()
    } else {
        format!("p{p}")
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn tree_format_for(path: &Path, fallback: Format) -> TreeFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("mfa" | "bin") => TreeFormat::Binary,
        Some("json") => TreeFormat::Json,
        Some("csv") => TreeFormat::Csv,
        _ => fallback.into(),
    }
}

fn extension(format: TreeFormat) -> &'static str {
    match format {
        TreeFormat::Binary => "mfa",
        TreeFormat::Json => "json",
        TreeFormat::Csv => "csv",
    }
}

fn window(j_min: Option<u32>, j_max: Option<u32>, fallback: ScaleWindow) -> Result<Option<ScaleWindow>, CliError> {
    if j_min.is_none() && j_max.is_none() {
        return Ok(None);
    }
    Ok(Some(ScaleWindow::new(j_min.unwrap_or(fallback.j_min), j_max.unwrap_or(fallback.j_max))?))
}

/// Collects written files and emits the manifest whatever the outcome.
struct Run {
    command: &'static str,
    dir: PathBuf,
    manifest: PathBuf,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn in_dir(command: &'static str, dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Run { command, dir: dir.to_path_buf(), manifest: dir.join("manifest.json"), outputs: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents)?;
        self.outputs.push(path);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(MfaError::from)?;
        text.push('\n');
        self.write(name, text)
    }

    fn finish(self, globals: &Globals, resolved: &Value, result: Result<(), CliError>) -> Result<(), CliError> {
        let (status, message) = match &result {
            Ok(()) => ("ok", None),
            Err(e) => (e.status(), Some(e.to_string())),
        };
        let manifest = json!({
            "tool": "mfa",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "seed": globals.seed,
            "globals": globals,
            "config": resolved,
            "outputs": self.outputs,
            "status": status,
            "message": message,
        });
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&self.manifest, text)?;
        result
    }
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct GenerateParams {
    #[command(flatten)]
    #[serde(flatten)]
    pub spec: SpecArgs,
    /// Finest scale of the tree.
    #[arg(long = "J")]
    #[serde(rename = "J")]
    pub max_scale: Option<u32>,
}

pub fn generate(globals: &Globals, cfg: Config, flags: GenerateParams) -> Result<(), CliError> {
    let defaults = GenerateParams { max_scale: Some(14), ..Default::default() };
    let (params, resolved) = resolve(&defaults, cfg, "generate", &flags)?;
    // `--out t.mfa` names the tree itself; anything else is a directory
    let out = &globals.out;
    let as_file = matches!(out.extension().and_then(|e| e.to_str()), Some("mfa" | "bin" | "json" | "csv"));
    let (mut run, tree_path, format) = if as_file {
        let dir = out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut run = Run::in_dir("generate", dir)?;
        run.manifest = out.with_extension("manifest.json");
        (run, out.clone(), tree_format_for(out, globals.format))
    } else {
        let format: TreeFormat = globals.format.into();
        (Run::in_dir("generate", out)?, out.join(format!("tree.{}", extension(format))), format)
    };
    let result = (|| {
        let spec = params.spec.build()?;
        let max_scale = params.max_scale.expect("default set");
        let tree = sample(&spec, max_scale, globals.seed)?;
        let mut buf = Vec::new();
        write_tree(&tree, format, &mut buf)?;
        fs::write(&tree_path, buf)?;
        run.outputs.push(tree_path.clone());
        println!("wrote {} ({} nodes, J = {max_scale})", tree_path.display(), tree.node_count());
        Ok(())
    })();
    run.finish(globals, &resolved, result)
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct AnalyzeParams {
    /// Tree file; the format follows the extension, else `--format`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Exponents to analyze, comma separated; `inf` for the Hölder case.
    #[arg(long, value_delimiter = ',')]
    pub p: Option<Vec<String>>,
    /// Half-width of the coefficient density bands.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Half-width of the leader density bands (defaults to `--epsilon`).
    #[arg(long)]
    pub leader_epsilon: Option<f64>,
    #[arg(long, value_enum)]
    pub aggregation: Option<AggregationArg>,
    #[arg(long, value_enum)]
    pub scaling_method: Option<ScalingArg>,
    /// Coefficient window.
    #[arg(long)]
    pub j_min: Option<u32>,
    #[arg(long)]
    pub j_max: Option<u32>,
    /// Leader window.
    #[arg(long)]
    pub leader_j_min: Option<u32>,
    #[arg(long)]
    pub leader_j_max: Option<u32>,
    /// Spectrum grid; the lower end defaults to just above `-1/p`.
    #[arg(long, allow_hyphen_values = true)]
    pub h_min: Option<f64>,
    #[arg(long)]
    pub h_max: Option<f64>,
    #[arg(long)]
    pub h_points: Option<usize>,
    /// Exponents at which the scaling function is estimated.
    #[arg(long, value_delimiter = ',')]
    pub scaling_p: Option<Vec<f64>>,
    /// Sampled signal (whitespace or comma separated, length `2^K`) to
    /// decompose instead of reading a tree.
    #[arg(long, conflicts_with = "input")]
    pub signal: Option<PathBuf>,
    /// Built-in filter for `--signal`.
    #[arg(long, value_enum)]
    pub filter: Option<FilterArg>,
    /// Custom orthonormal low-pass filter for `--signal`; overrides `--filter`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub filter_coefficients: Option<Vec<f64>>,
    /// Extra band half-widths whose formalism spectra are reported side by side.
    #[arg(long, value_delimiter = ',')]
    pub epsilon_sweep: Option<Vec<f64>>,
    /// Also report the coefficient density and `h_max` under both the
    /// max-over-scales and the regression aggregation.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub verbose: Option<bool>,
    /// Optional reference distribution for the spectrum comparison.
    #[command(flatten)]
    #[serde(flatten)]
    pub reference: SpecArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterArg {
    Haar,
    Daubechies4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationArg {
    MaxOverScales,
    Regression,
    OriginRegression,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::MaxOverScales => Aggregation::MaxOverScales,
            AggregationArg::Regression => Aggregation::Regression,
            AggregationArg::OriginRegression => Aggregation::OriginRegression,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingArg {
    Regression,
    MinRatio,
    OriginRegression,
}

impl From<ScalingArg> for ScalingMethod {
    fn from(a: ScalingArg) -> Self {
        match a {
            ScalingArg::Regression => ScalingMethod::Regression,
            ScalingArg::MinRatio => ScalingMethod::MinRatio,
            ScalingArg::OriginRegression => ScalingMethod::OriginRegression,
        }
    }
}

fn load_signal(path: &Path, params: &AnalyzeParams) -> Result<CoefficientTree, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read signal {}: {e}", path.display())))?;
    let samples = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| CliError::Config(format!("bad sample '{t}' in {}", path.display()))))
        .collect::<Result<Vec<f64>, _>>()?;
    let filter = match (&params.filter_coefficients, params.filter) {
        (Some(h), _) => WaveletFilter::new(h.clone())?,
        (None, Some(FilterArg::Haar)) => WaveletFilter::haar(),
        (None, _) => WaveletFilter::daubechies4(),
    };
    Ok(dwt_front_end(&samples, &filter)?.tree)
}

fn load_tree(path: &Path, fallback: Format) -> Result<CoefficientTree, CliError> {
    let file =
        fs::File::open(path).map_err(|e| CliError::Config(format!("cannot open tree {}: {e}", path.display())))?;
    Ok(read_tree(std::io::BufReader::new(file), tree_format_for(path, fallback))?)
}

/// Largest `|a - b|` over `h` in `[lo, hi]`; a missing estimate counts as `inf`.
fn max_gap(h: &[f64], a: &[f64], b: &[f64], lo: f64, hi: f64) -> f64 {
    h.iter()
        .zip(a.iter().zip(b))
        .filter(|(h, _)| **h >= lo && **h <= hi)
        .map(|(_, (x, y))| if x == y { 0.0 } else { (x - y).abs() })
        .fold(0.0, f64::max)
}

fn csv_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn analyze(globals: &Globals, cfg: Config, flags: AnalyzeParams) -> Result<(), CliError> {
    let lib = SpectrumOptions::default();
    let defaults = AnalyzeParams {
        p: Some(vec!["2".into()]),
        epsilon: Some(lib.epsilon),
        aggregation: Some(AggregationArg::MaxOverScales),
        scaling_method: Some(ScalingArg::Regression),
        h_max: Some(2.0),
        h_points: Some(201),
        scaling_p: Some(vec![0.25, 0.5, 1.0, 2.0, 4.0]),
        ..Default::default()
    };
    let (params, resolved) = resolve(&defaults, cfg, "analyze", &flags)?;
    let mut run = Run::in_dir("analyze", &globals.out)?;
    let result = (|| {
        let ps = parse_ps(params.p.as_deref().unwrap_or_default())?;
        let tree = match (&params.input, &params.signal) {
            (Some(input), _) => load_tree(input, globals.format)?,
            (None, Some(signal)) => load_signal(signal, &params)?,
            (None, None) => return Err(CliError::Config("analyze needs --input or --signal".into())),
        };
        let sweep = params.epsilon_sweep.clone().unwrap_or_default();
        if let Some(e) = sweep.iter().find(|e| !(**e > 0.0)) {
            return Err(CliError::Config(format!("sweep half-widths must be positive, got {e}")));
        }
        let big_j = tree.max_scale();
        let opts = SpectrumOptions {
            epsilon: params.epsilon.expect("default set"),
            leader_epsilon: params.leader_epsilon,
            leader_window: window(params.leader_j_min, params.leader_j_max, ScaleWindow::default_for(big_j))?,
            coefficient_window: window(params.j_min, params.j_max, ScaleWindow::with_margin(big_j, 0))?,
            aggregation: params.aggregation.expect("default set").into(),
            ..lib
        };
        let reference = if params.reference.is_empty() { None } else { Some(params.reference.build()?) };
        let profile = params.reference.profile()?;
        let h_points = params.h_points.expect("default set").max(2);

        let scaling = estimate_scaling(
            &tree,
            params.scaling_p.as_deref().unwrap_or_default(),
            opts.coefficient_window(big_j),
            params.scaling_method.expect("default set").into(),
        )?;
        run.write_json("scaling.json", &scaling)?;
        let mut csv = String::from("p,eta\n");
        for (p, e) in scaling.p_grid.iter().zip(&scaling.eta_hat) {
            csv.push_str(&format!("{p:?},{}\n", csv_num(*e)));
        }
        run.write("scaling.csv", csv)?;

        let mut summary = Vec::new();
        for p in ps {
            let tag = p_tag(p);
            let lo = params.h_min.unwrap_or(-inv_p(p) + 0.01);
            let hi = params.h_max.expect("default set");
            if !(lo < hi) {
                return Err(CliError::Config(format!("empty h range [{lo}, {hi}]")));
            }
            let grid = linspace(lo, hi, h_points);
            let emp = empirical_spectrum(&tree, p, &grid, &opts)?;
            run.write(&format!("density_{tag}.csv"), emp.coefficient_density.to_csv())?;
            run.write(&format!("leader_density_{tag}.csv"), emp.leader_density.to_csv())?;
            run.write_json(&format!("spectrum_{tag}.json"), &emp)?;

            let theory = reference.as_ref().map(|s| theoretical_spectrum(s, p)).transpose()?;
            let d_theory: Option<Vec<f64>> = theory.as_ref().map(|t| grid.iter().map(|h| t.eval(*h)).collect());
            let mut csv = String::from(if d_theory.is_some() {
                "h,D_formalism,D_leader,D_theory\n"
            } else {
                "h,D_formalism,D_leader\n"
            });
            for (i, h) in grid.iter().enumerate() {
                csv.push_str(&format!("{h:?},{},{}", csv_num(emp.formalism.d[i]), csv_num(emp.leader.d[i])));
                if let Some(dt) = &d_theory {
                    csv.push_str(&format!(",{}", csv_num(dt[i])));
                }
                csv.push('\n');
            }
            run.write(&format!("spectrum_{tag}.csv"), csv)?;

            if !sweep.is_empty() {
                let curves = sweep
                    .iter()
                    .map(|&e| {
                        Ok(empirical_spectrum(&tree, p, &grid, &SpectrumOptions { epsilon: e, ..opts.clone() })?
                            .formalism)
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                let mut csv = String::from("h");
                for e in &sweep {
                    csv.push_str(&format!(",D_eps{e}"));
                }
                csv.push('\n');
                for (i, h) in grid.iter().enumerate() {
                    csv.push_str(&format!("{h:?}"));
                    for c in &curves {
                        csv.push_str(&format!(",{}", csv_num(c.d[i])));
                    }
                    csv.push('\n');
                }
                run.write(&format!("spectrum_{tag}_epsilon_sweep.csv"), csv)?;
            }

            let mut entry = json!({
                "p": if p.is_infinite() { json!("inf") } else { json!(p) },
                "eta_hat": if emp.eta_hat.is_finite() { json!(emp.eta_hat) } else { json!("inf") },
                "h_max_formalism": csv_num(emp.formalism.h_max_p),
                "h_min_leader": csv_num(emp.leader.h_min),
            });
            if let (Some(t), Some(dt)) = (&theory, &d_theory) {
                let (lo_t, hi_t) = (t.h_min, t.h_max);
                let gap_f = max_gap(&grid, &emp.formalism.d, dt, lo_t, hi_t);
                let gap_l = max_gap(&grid, &emp.leader.d, dt, lo_t, hi_t);
                println!(
                    "{tag}: max |D_formalism - D| = {gap_f:.4}, max |D_leader - D| = {gap_l:.4} on [{lo_t}, {}]",
                    csv_num(hi_t)
                );
                entry["theory_h_max"] = json!(csv_num(hi_t));
                entry["max_abs_diff_formalism"] = json!(csv_num(gap_f));
                entry["max_abs_diff_leader"] = json!(csv_num(gap_l));
            } else {
                println!("{tag}: eta_hat = {}, h_max = {}", csv_num(emp.eta_hat), csv_num(emp.formalism.h_max_p));
            }
            if params.verbose == Some(true) {
                let mut both = Map::new();
                for (name, agg) in
                    [("max_over_scales", Aggregation::MaxOverScales), ("regression", Aggregation::Regression)]
                {
                    let alt =
                        empirical_spectrum(&tree, p, &grid, &SpectrumOptions { aggregation: agg, ..opts.clone() })?;
                    run.write(&format!("density_{tag}_{name}.csv"), alt.coefficient_density.to_csv())?;
                    println!("{tag}: {name} h_max = {}", csv_num(alt.formalism.h_max_p));
                    both.insert(name.into(), json!({ "h_max_formalism": csv_num(alt.formalism.h_max_p) }));
                }
                entry["aggregations"] = Value::Object(both);
            }
            summary.push(entry);
        }
        if let Some(profile) = profile {
            let report = membership_diagnostic(&tree, &profile, opts.epsilon, opts.coefficient_window(big_j), 0.1)?;
            println!("membership: {}", report.note);
            run.write_json("membership.json", &report)?;
        }
        run.write_json("summary.json", &summary)?;
        Ok(())
    })();
    run.finish(globals, &resolved, result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoryWhat {
    Spectrum,
    PNu,
    Asymptotics,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct TheoryParams {
    #[command(flatten)]
    #[serde(flatten)]
    pub spec: SpecArgs,
    #[arg(long, value_delimiter = ',')]
    pub p: Option<Vec<String>>,
    #[arg(long, value_enum)]
    pub what: Option<TheoryWhat>,
    #[arg(long)]
    pub h_points: Option<usize>,
}

pub fn theory(globals: &Globals, cfg: Config, flags: TheoryParams) -> Result<(), CliError> {
    let defaults = TheoryParams {
        p: Some(vec!["2".into()]),
        what: Some(TheoryWhat::Spectrum),
        h_points: Some(201),
        ..Default::default()
    };
    let (params, resolved) = resolve(&defaults, cfg, "theory", &flags)?;
    let mut run = Run::in_dir("theory", &globals.out)?;
    let result = (|| {
        match params.what.expect("default set") {
            TheoryWhat::PNu => {
                let profile = match params.spec.profile()? {
                    Some(p) => p,
                    None => match params.spec.build()?.family {
                        Family::ProfileAssociated { profile, .. } => profile,
                        _ => return Err(CliError::Config("p_nu needs --profile".into())),
                    },
                };
                let v = p_nu(&profile)?;
                println!("p_nu = {}", csv_num(v));
                run.write_json("p_nu.json", &json!({ "p_nu": csv_num(v) }))?;
            }
            TheoryWhat::Asymptotics => {
                let asy = asymptotics(&params.spec.build()?)?;
                let lo = asy.atoms.first().map_or(0.0, |a| a.alpha) - 0.5;
                let hi = asy.atoms.last().map_or(1.0, |a| a.alpha) + 1.0;
                let grid = asy.on_grid(&linspace(lo, hi, params.h_points.expect("default set").max(2)));
                let mut csv = String::from("alpha,rho,nu,lambda\n");
                for i in 0..grid.alpha.len() {
                    csv.push_str(&format!(
                        "{:?},{},{},{}\n",
                        grid.alpha[i],
                        csv_num(grid.bold_rho[i]),
                        csv_num(grid.bold_nu[i]),
                        csv_num(grid.bold_lambda[i])
                    ));
                }
                println!("h_min = {}, {} atoms", asy.h_min, asy.atoms.len());
                run.write_json("asymptotics.json", &json!({ "asymptotics": asy, "grid": grid }))?;
                run.write("asymptotics.csv", csv)?;
            }
            TheoryWhat::Spectrum => {
                let spec = params.spec.build()?;
                for p in parse_ps(params.p.as_deref().unwrap_or_default())? {
                    let tag = p_tag(p);
                    let th = theoretical_spectrum(&spec, p)?;
                    let lo = (th.h_min - 0.25).max(-inv_p(p) + 1e-3);
                    let hi = if th.h_max.is_finite() { th.h_max + 0.25 } else { th.h_min + 2.0 };
                    let curve = th.curve(&linspace(lo, hi, params.h_points.expect("default set").max(2)));
                    println!("{tag}: h_min = {}, h_max = {}, p0 = {}", th.h_min, csv_num(th.h_max), csv_num(th.p0));
                    run.write_json(&format!("theory_{tag}.json"), &json!({ "theory": th, "curve": curve }))?;
                    run.write(&format!("theory_{tag}.csv"), curve.to_csv())?;
                }
            }
        }
        Ok(())
    })();
    run.finish(globals, &resolved, result)
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidateParams {
    #[command(flatten)]
    #[serde(flatten)]
    pub spec: SpecArgs,
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long = "J")]
    #[serde(rename = "J")]
    pub max_scale: Option<u32>,
    /// Number of Monte Carlo realizations.
    #[arg(long)]
    pub realizations: Option<usize>,
    /// Sets every gate tolerance; per-gate flags override it.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub tol_density: Option<f64>,
    #[arg(long)]
    pub tol_eta: Option<f64>,
    #[arg(long)]
    pub tol_spectrum: Option<f64>,
    #[arg(long)]
    pub tol_h_max: Option<f64>,
    /// Fraction of realizations that must pass each gate.
    #[arg(long)]
    pub pass_fraction: Option<f64>,
    /// Half-width of the coefficient density behind the spectrum.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub leader_epsilon: Option<f64>,
    /// Half-width of the density compared at the atoms.
    #[arg(long)]
    pub density_epsilon: Option<f64>,
    /// Spectrum comparison range; defaults to `[h_min + 2ε, h_max - 4ε]`.
    #[arg(long, allow_hyphen_values = true)]
    pub h_min: Option<f64>,
    #[arg(long)]
    pub h_max: Option<f64>,
    #[arg(long)]
    pub h_points: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub scaling_p: Option<Vec<f64>>,
}

pub fn validate(globals: &Globals, cfg: Config, flags: ValidateParams) -> Result<(), CliError> {
    let lib = ValidationOptions::default();
    let defaults = ValidateParams {
        spec: SpecArgs { family: Some(FamilyArg::Lacunary), alpha: Some(0.5), eta: Some(0.5), ..Default::default() },
        p: Some("2".into()),
        max_scale: Some(14),
        realizations: Some(8),
        pass_fraction: Some(lib.tolerances.pass_fraction),
        epsilon: Some(lib.analysis.epsilon),
        leader_epsilon: lib.analysis.leader_epsilon,
        density_epsilon: Some(lib.density_epsilon),
        h_points: Some(lib.h_points),
        scaling_p: Some(lib.scaling_p.clone()),
        ..Default::default()
    };
    let (params, resolved) = resolve(&defaults, cfg, "validate", &flags)?;
    let mut run = Run::in_dir("validate", &globals.out)?;
    let result = (|| {
        let spec = params.spec.build()?;
        let p = parse_p(params.p.as_deref().expect("default set"))?;
        let mut tolerances = match params.tolerance {
            Some(t) => Tolerances::uniform(t),
            None => Tolerances::default(),
        };
        tolerances.density = params.tol_density.unwrap_or(tolerances.density);
        tolerances.eta = params.tol_eta.unwrap_or(tolerances.eta);
        tolerances.spectrum = params.tol_spectrum.unwrap_or(tolerances.spectrum);
        tolerances.h_max = params.tol_h_max.unwrap_or(tolerances.h_max);
        tolerances.pass_fraction = params.pass_fraction.expect("default set");
        let h_range = match (params.h_min, params.h_max) {
            (None, None) => None,
            (Some(lo), Some(hi)) => Some((lo, hi)),
            _ => return Err(CliError::Config("--h-min and --h-max go together".into())),
        };
        let opts = ValidationOptions {
            seed: globals.seed,
            analysis: SpectrumOptions {
                epsilon: params.epsilon.expect("default set"),
                leader_epsilon: params.leader_epsilon,
                ..lib.analysis.clone()
            },
            density_epsilon: params.density_epsilon.expect("default set"),
            h_range,
            h_points: params.h_points.expect("default set"),
            scaling_p: params.scaling_p.clone().unwrap_or_default(),
            tolerances,
            ..lib
        };
        let report = validate_montecarlo(
            &spec,
            p,
            params.max_scale.expect("default set"),
            params.realizations.expect("default set"),
            &opts,
        )?;
        let table = report.to_table();
        print!("{table}");
        run.write("report.txt", &table)?;
        run.write_json("report.json", &report)?;
        if report.passed {
            Ok(())
        } else {
            Err(CliError::GateFailure)
        }
    })();
    run.finish(globals, &resolved, result)
}
