// SPDX-License-Identifier: Apache-2.0

//! Scenario files: parsing, defaults and up-front validation.
//!
//! A scenario is TOML with a `[grid]` section, optional `[medium]`, `[background]` and
//! `[solver]` sections, and one `[[experiment]]` table per experiment. Experiments may
//! override the grid and media; everything else is kind-specific.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use medscat::moeller::{wrap_check, Direction, WavePacket, Window};
use medscat::{Grid, MatrixSymbol, MediumField, MediumSpec, ResolventConfig};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::artifacts::{grid_hash, read_array};
use crate::error::{CliError, CliResult};

/// Experiment tags accepted in `kind`.
pub const EXPERIMENT_KINDS: [&str; 7] = [
    "resolvent-identities",
    "schatten-report",
    "wave-operator",
    "wave-equation",
    "trace-conditions",
    "compactness",
    "essential-spectrum-proxy",
];

/// Operator families for `schatten-report`.
pub const SCHATTEN_OPERATORS: [&str; 4] =
    ["weight-symbol", "weighted-resolvent", "conjugated-multiplier", "four-factor"];

/// A length given as a number or as a multiple of π (`"64pi"`).
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
enum Length {
    Number(f64),
    Text(LengthText),
}

#[derive(Debug, Clone, Copy)]
struct LengthText(f64);

impl<'de> Deserialize<'de> for LengthText {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_length(&s)
            .map(LengthText)
            .ok_or_else(|| serde::de::Error::custom(format!("cannot read `{s}` as a length")))
    }
}

fn parse_length(s: &str) -> Option<f64> {
    let t = s.trim().replace(' ', "");
    if let Some(head) = t.strip_suffix("pi") {
        let head = head.strip_suffix('*').unwrap_or(head);
        let k = if head.is_empty() { 1.0 } else { head.parse::<f64>().ok()? };
        return Some(k * std::f64::consts::PI);
    }
    t.parse().ok()
}

impl Length {
    fn value(self) -> f64 {
        match self {
            Length::Number(v) => v,
            Length::Text(LengthText(v)) => v,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    #[serde(default)]
    seed: u64,
    output: Option<PathBuf>,
    grid: RawGrid,
    medium: Option<RawMedium>,
    background: Option<RawMedium>,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default, rename = "experiment")]
    experiments: Vec<toml::Spanned<toml::Table>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    d: usize,
    n: usize,
    half_length: Length,
    #[serde(default = "default_symbol")]
    symbol: String,
}

fn default_symbol() -> String {
    "laplacian".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMedium {
    family: Option<String>,
    value: Option<f64>,
    amplitude: Option<f64>,
    width: Option<f64>,
    power: Option<f64>,
    file: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    tol: Option<f64>,
    max_iter: Option<usize>,
    restart: Option<usize>,
    dense_fallback: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCommon {
    name: String,
    kind: String,
    d: Option<usize>,
    n: Option<usize>,
    half_length: Option<Length>,
    symbol: Option<String>,
    medium: Option<RawMedium>,
    background: Option<RawMedium>,
}

const COMMON_KEYS: [&str; 8] = ["name", "kind", "d", "n", "half_length", "symbol", "medium", "background"];

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPacket {
    center: f64,
    momentum: f64,
    width: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIdentities {
    z: Option<[f64; 2]>,
    fields: Option<usize>,
    tol: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchatten {
    operator: String,
    check: Option<String>,
    r: Option<f64>,
    s: Option<f64>,
    l: Option<f64>,
    power: Option<u32>,
    z: Option<[f64; 2]>,
    kappa: Option<f64>,
    order: Option<u32>,
    p: Option<f64>,
    tol: Option<f64>,
    refine_n: Option<usize>,
    fit_window: Option<[usize; 2]>,
    slope_range: Option<[f64; 2]>,
    expect_threshold: Option<f64>,
    method: Option<String>,
    probes: Option<usize>,
    grids: Option<Vec<usize>>,
    iterations: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWaveOperator {
    packet: RawPacket,
    t_max: f64,
    t0: Option<f64>,
    direction: Option<String>,
    tol: Option<f64>,
    window: Option<[f64; 2]>,
    extrapolate: Option<bool>,
    isometry_tol: Option<f64>,
    intertwining_tol: Option<f64>,
    completeness_tol: Option<f64>,
    allow_wrap: Option<bool>,
    oracle_n: Option<usize>,
    oracle_half_length: Option<Length>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWaveEquation {
    packet: RawPacket,
    t_max: f64,
    t0: Option<f64>,
    tol: Option<f64>,
    drift_tol: Option<f64>,
    drift_samples: Option<usize>,
    allow_wrap: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrace {
    window: [f64; 2],
    tol: Option<f64>,
    refine_n: Option<usize>,
    weight_r: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCompactness {
    z: Option<[f64; 2]>,
    index: Option<usize>,
    ratio_below: Option<f64>,
    ratio_above: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEssential {
    lambda_max: f64,
    refine_n: Option<usize>,
    refine_half_length: Option<Length>,
    slack: Option<usize>,
}

/// Where a medium comes from.
#[derive(Debug, Clone)]
pub enum MediumSource {
    Family(MediumSpec),
    /// Samples read from an array file, with the grid hash recorded in its header.
    File {
        path: PathBuf,
        values: Vec<f64>,
        grid_hash: String,
    },
}

impl MediumSource {
    pub fn label(&self) -> String {
        match self {
            MediumSource::Family(s) => s.label(),
            MediumSource::File { path, .. } => format!("file({})", path.display()),
        }
    }

    /// Samples the medium on `grid`. Scalar families become `diag(1, m)` for the wave
    /// symbol and `m·I` otherwise.
    pub fn build(&self, grid: &Grid, symbol: &str) -> medscat::Result<MediumField> {
        match self {
            MediumSource::Family(spec) => {
                if symbol == "wave" && !matches!(spec, MediumSpec::WaveBlock(_)) {
                    MediumSpec::WaveBlock(Box::new(spec.clone())).build(grid)
                } else {
                    spec.build(grid)
                }
            }
            MediumSource::File { values, grid_hash: hash, path } => {
                if *hash != grid_hash(grid) {
                    return Err(medscat::Error::config(
                        "medium.file",
                        format!("{} was sampled on a different grid", path.display()),
                    ));
                }
                MediumField::from_array(grid, values.clone(), format!("file({})", path.display()))
            }
        }
    }

    /// The scalar profile for wave-equation experiments.
    pub fn build_scalar(&self, grid: &Grid) -> medscat::Result<MediumField> {
        match self {
            MediumSource::Family(MediumSpec::WaveBlock(inner)) => inner.build(grid),
            other => other.build(grid, "laplacian"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub d: usize,
    pub n: usize,
    pub half_length: f64,
}

impl GridSpec {
    pub fn build(&self, fiber: usize) -> medscat::Result<Grid> {
        Grid::new(self.d, self.n, self.half_length, fiber)
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketSpec {
    pub center: f64,
    pub momentum: f64,
    pub width: f64,
}

impl PacketSpec {
    /// A packet along the first axis.
    pub fn packet(&self, d: usize) -> medscat::Result<WavePacket> {
        let mut c = vec![0.0; d];
        let mut k = vec![0.0; d];
        c[0] = self.center;
        k[0] = self.momentum;
        WavePacket::new(c, k, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchattenCheck {
    Refinement,
    NormStability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumRoute {
    Dense,
    Randomized { probes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchattenParams {
    pub operator: String,
    pub check: SchattenCheck,
    pub r: f64,
    pub s: f64,
    pub l: f64,
    pub power: u32,
    pub z: [f64; 2],
    pub kappa: f64,
    pub order: u32,
    pub p: Option<f64>,
    pub tol: f64,
    pub refine_n: usize,
    pub fit_window: Option<[usize; 2]>,
    pub slope_range: Option<[f64; 2]>,
    pub expect_threshold: Option<f64>,
    pub route: SpectrumRoute,
    pub grids: Vec<usize>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveOperatorParams {
    pub packet: PacketSpec,
    pub t_max: f64,
    pub t0: f64,
    pub direction: Direction,
    pub tol: f64,
    pub window: Option<Window>,
    pub extrapolate: bool,
    pub isometry_tol: f64,
    pub intertwining_tol: f64,
    pub completeness_tol: f64,
    pub allow_wrap: bool,
    pub oracle: Option<GridSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveEquationParams {
    pub packet: PacketSpec,
    pub t_max: f64,
    pub t0: f64,
    pub tol: f64,
    pub drift_tol: f64,
    pub drift_samples: usize,
    pub allow_wrap: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentParams {
    ResolventIdentities {
        z: [f64; 2],
        fields: usize,
        tol: f64,
    },
    Schatten(SchattenParams),
    WaveOperator(WaveOperatorParams),
    WaveEquation(WaveEquationParams),
    TraceConditions {
        window: Window,
        tol: f64,
        refine_n: usize,
        weight_r: Option<f64>,
    },
    Compactness {
        z: [f64; 2],
        index: usize,
        ratio_below: Option<f64>,
        ratio_above: Option<f64>,
    },
    /// Compares eigenvalue counting functions of `H` and `H₀` on a base box and on an
    /// enlarged one (`n` and `L` both doubled by default, keeping the spacing).
    EssentialSpectrum {
        lambda_max: f64,
        enlarged: GridSpec,
        slack: usize,
    },
}

impl ExperimentParams {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentParams::ResolventIdentities { .. } => "resolvent-identities",
            ExperimentParams::Schatten(_) => "schatten-report",
            ExperimentParams::WaveOperator(_) => "wave-operator",
            ExperimentParams::WaveEquation(_) => "wave-equation",
            ExperimentParams::TraceConditions { .. } => "trace-conditions",
            ExperimentParams::Compactness { .. } => "compactness",
            ExperimentParams::EssentialSpectrum { .. } => "essential-spectrum-proxy",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub name: String,
    /// Position in declaration order.
    pub index: usize,
    pub line: usize,
    pub grid: GridSpec,
    pub symbol: String,
    pub medium: Arc<MediumSource>,
    pub background: Arc<MediumSource>,
    pub params: ExperimentParams,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub solver: ResolventConfig,
    pub experiments: Vec<Experiment>,
    /// The scenario text as read, copied into the output directory.
    pub source: String,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn toml_error(text: &str, e: toml::de::Error) -> CliError {
    let line = e.span().map(|s| line_of(text, s.start));
    let msg = e.message().trim().to_string();
    match line {
        Some(l) => CliError::Config(format!("line {l}: {msg}")),
        None => CliError::Config(msg),
    }
}

fn positive(name: &str, v: f64) -> CliResult<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::Config(format!("field `{name}` must be positive and finite (got {v})")))
    }
}

fn medium_source(raw: &RawMedium, section: &str, base: &Path) -> CliResult<MediumSource> {
    let need = |v: Option<f64>, key: &str| {
        v.ok_or_else(|| CliError::Config(format!("field `{section}.{key}` is required for this family")))
    };
    match (&raw.family, &raw.file) {
        (Some(_), Some(_)) => Err(CliError::Config(format!("`{section}` sets both `family` and `file`"))),
        (None, None) => Err(CliError::Config(format!("`{section}` needs `family` or `file`"))),
        (None, Some(file)) => {
            if raw.value.is_some() || raw.amplitude.is_some() || raw.width.is_some() || raw.power.is_some() {
                return Err(CliError::Config(format!("`{section}.file` does not take family parameters")));
            }
            let path = if file.is_absolute() { file.clone() } else { base.join(file) };
            let (values, header) = read_array(&path)
                .map_err(|e| CliError::Config(format!("field `{section}.file`: {}: {e}", path.display())))?;
            Ok(MediumSource::File { path, values, grid_hash: header.grid_hash })
        }
        (Some(family), None) => {
            let spec = match family.as_str() {
                "constant" => MediumSpec::Constant { value: need(raw.value, "value")? },
                "bump" => {
                    MediumSpec::Bump { amplitude: need(raw.amplitude, "amplitude")?, width: need(raw.width, "width")? }
                }
                "rational" => MediumSpec::Rational {
                    amplitude: need(raw.amplitude, "amplitude")?,
                    power: need(raw.power, "power")?,
                },
                other => {
                    return Err(CliError::Config(format!(
                        "field `{section}.family`: unknown family `{other}` (expected constant, bump or rational)"
                    )))
                }
            };
            let allowed: &[&str] = match family.as_str() {
                "constant" => &["value"],
                "bump" => &["amplitude", "width"],
                _ => &["amplitude", "power"],
            };
            for (key, set) in [
                ("value", raw.value.is_some()),
                ("amplitude", raw.amplitude.is_some()),
                ("width", raw.width.is_some()),
                ("power", raw.power.is_some()),
            ] {
                if set && !allowed.contains(&key) {
                    return Err(CliError::Config(format!(
                        "field `{section}.{key}` does not apply to family `{family}`"
                    )));
                }
            }
            Ok(MediumSource::Family(spec))
        }
    }
}

fn split_table(table: &toml::Table) -> (toml::Table, toml::Table) {
    let mut common = toml::Table::new();
    let mut specific = toml::Table::new();
    for (k, v) in table {
        if COMMON_KEYS.contains(&k.as_str()) {
            common.insert(k.clone(), v.clone());
        } else {
            specific.insert(k.clone(), v.clone());
        }
    }
    (common, specific)
}

fn from_table<T: DeserializeOwned>(t: toml::Table, ctx: &str) -> CliResult<T> {
    T::deserialize(toml::Value::Table(t)).map_err(|e| CliError::Config(format!("{ctx}: {}", e.message().trim())))
}

fn check_refined(base: usize, refine: Option<usize>, ctx: &str) -> CliResult<usize> {
    let r = refine.unwrap_or(2 * base);
    if r <= base || r % 2 != 0 {
        return Err(CliError::Config(format!("{ctx}: field `refine_n` must be even and exceed n = {base} (got {r})")));
    }
    Ok(r)
}

fn shift(z: Option<[f64; 2]>) -> [f64; 2] {
    z.unwrap_or([0.0, 1.0])
}

fn packet_spec(p: RawPacket, ctx: &str) -> CliResult<PacketSpec> {
    positive(&format!("{ctx} packet.width"), p.width)?;
    Ok(PacketSpec { center: p.center, momentum: p.momentum, width: p.width })
}

fn schedule_start(t_max: f64, t0: Option<f64>, ctx: &str) -> CliResult<f64> {
    positive(&format!("{ctx} t_max"), t_max)?;
    let t0 = t0.unwrap_or(t_max / 32.0);
    positive(&format!("{ctx} t0"), t0)?;
    if t_max < 10.0 * t0 {
        return Err(CliError::Config(format!("{ctx}: the schedule [t0, t_max] = [{t0}, {t_max}] must span a decade")));
    }
    Ok(t0)
}

fn kind_params(
    kind: &str,
    specific: toml::Table,
    grid: &GridSpec,
    symbol: &MatrixSymbol,
    ctx: &str,
) -> CliResult<ExperimentParams> {
    Ok(match kind {
        "resolvent-identities" => {
            let raw: RawIdentities = from_table(specific, ctx)?;
            let z = shift(raw.z);
            if z[1] == 0.0 {
                return Err(CliError::Config(format!("{ctx}: field `z` must be non-real for the identities")));
            }
            ExperimentParams::ResolventIdentities {
                z,
                fields: raw.fields.unwrap_or(10).max(1),
                tol: positive("tol", raw.tol.unwrap_or(1e-8))?,
            }
        }
        "schatten-report" => {
            let raw: RawSchatten = from_table(specific, ctx)?;
            if !SCHATTEN_OPERATORS.contains(&raw.operator.as_str()) {
                return Err(CliError::Config(format!(
                    "{ctx}: field `operator`: unknown operator `{}` (expected one of {SCHATTEN_OPERATORS:?})",
                    raw.operator
                )));
            }
            let check = match raw.check.as_deref().unwrap_or("refinement") {
                "refinement" => SchattenCheck::Refinement,
                "norm-stability" => SchattenCheck::NormStability,
                other => {
                    return Err(CliError::Config(format!(
                        "{ctx}: field `check`: `{other}` is not refinement or norm-stability"
                    )))
                }
            };
            let route = match raw.method.as_deref().unwrap_or("dense") {
                "dense" => SpectrumRoute::Dense,
                "randomized" => SpectrumRoute::Randomized { probes: raw.probes.unwrap_or(400).max(2) },
                other => {
                    return Err(CliError::Config(format!(
                        "{ctx}: field `method`: `{other}` is not dense or randomized"
                    )))
                }
            };
            let power = raw.power.unwrap_or(1).max(1);
            let kappa = raw.kappa.unwrap_or_else(|| symbol.declared_order().unwrap_or(1.0));
            let p = raw.p;
            if let Some(p) = p {
                positive("p", p)?;
            }
            if matches!(route, SpectrumRoute::Randomized { .. }) && p.is_some_and(|p| p != 2.0) {
                return Err(CliError::Config(format!("{ctx}: the randomized route only estimates p = 2")));
            }
            if matches!(route, SpectrumRoute::Randomized { .. }) && raw.operator != "weighted-resolvent" {
                return Err(CliError::Config(format!(
                    "{ctx}: the randomized route applies to weighted-resolvent only"
                )));
            }
            let grids = raw.grids.unwrap_or_else(|| vec![grid.n, 2 * grid.n]);
            if check == SchattenCheck::NormStability && grids.len() < 2 {
                return Err(CliError::Config(format!("{ctx}: field `grids` needs at least two sizes")));
            }
            if raw.slope_range.is_some() && raw.fit_window.is_none() {
                return Err(CliError::Config(format!("{ctx}: field `slope_range` needs `fit_window`")));
            }
            if let Some([lo, hi]) = raw.fit_window {
                if lo < 1 || hi < lo + 7 {
                    return Err(CliError::Config(format!(
                        "{ctx}: field `fit_window` needs 1 <= lo and at least 8 points"
                    )));
                }
            }
            ExperimentParams::Schatten(SchattenParams {
                operator: raw.operator,
                check,
                r: raw.r.unwrap_or(1.0),
                s: raw.s.unwrap_or(1.0),
                l: raw.l.unwrap_or(1.0),
                power,
                z: shift(raw.z),
                kappa,
                order: raw.order.unwrap_or(power),
                p,
                tol: positive("tol", raw.tol.unwrap_or(0.1))?,
                refine_n: check_refined(grid.n, raw.refine_n, ctx)?,
                fit_window: raw.fit_window,
                slope_range: raw.slope_range,
                expect_threshold: raw.expect_threshold,
                route,
                grids,
                iterations: raw.iterations.unwrap_or(400).max(1),
            })
        }
        "wave-operator" => {
            let raw: RawWaveOperator = from_table(specific, ctx)?;
            let t0 = schedule_start(raw.t_max, raw.t0, ctx)?;
            let direction = match raw.direction.as_deref().unwrap_or("+") {
                "+" | "plus" => Direction::Plus,
                "-" | "minus" => Direction::Minus,
                other => return Err(CliError::Config(format!("{ctx}: field `direction`: `{other}` is not + or -"))),
            };
            let window = match raw.window {
                Some([lo, hi]) => {
                    Some(Window::new(lo, hi).map_err(|e| CliError::Config(format!("{ctx}: field `window`: {e}")))?)
                }
                None => None,
            };
            let oracle = match (raw.oracle_n, raw.oracle_half_length) {
                (None, None) => None,
                (n, l) => Some(GridSpec {
                    d: grid.d,
                    n: n.unwrap_or(2 * grid.n),
                    half_length: l.map(Length::value).unwrap_or(2.0 * grid.half_length),
                }),
            };
            ExperimentParams::WaveOperator(WaveOperatorParams {
                packet: packet_spec(raw.packet, ctx)?,
                t_max: raw.t_max,
                t0,
                direction,
                tol: positive("tol", raw.tol.unwrap_or(1e-2))?,
                window,
                extrapolate: raw.extrapolate.unwrap_or(false),
                isometry_tol: positive("isometry_tol", raw.isometry_tol.unwrap_or(1e-2))?,
                intertwining_tol: positive("intertwining_tol", raw.intertwining_tol.unwrap_or(2e-2))?,
                completeness_tol: positive("completeness_tol", raw.completeness_tol.unwrap_or(2e-2))?,
                allow_wrap: raw.allow_wrap.unwrap_or(false),
                oracle,
            })
        }
        "wave-equation" => {
            let raw: RawWaveEquation = from_table(specific, ctx)?;
            let t0 = schedule_start(raw.t_max, raw.t0, ctx)?;
            ExperimentParams::WaveEquation(WaveEquationParams {
                packet: packet_spec(raw.packet, ctx)?,
                t_max: raw.t_max,
                t0,
                tol: positive("tol", raw.tol.unwrap_or(3e-2))?,
                drift_tol: positive("drift_tol", raw.drift_tol.unwrap_or(1e-9))?,
                drift_samples: raw.drift_samples.unwrap_or(10).max(1),
                allow_wrap: raw.allow_wrap.unwrap_or(false),
            })
        }
        "trace-conditions" => {
            let raw: RawTrace = from_table(specific, ctx)?;
            let window = Window::new(raw.window[0], raw.window[1])
                .map_err(|e| CliError::Config(format!("{ctx}: field `window`: {e}")))?;
            ExperimentParams::TraceConditions {
                window,
                tol: positive("tol", raw.tol.unwrap_or(0.1))?,
                refine_n: check_refined(grid.n, raw.refine_n, ctx)?,
                weight_r: raw.weight_r,
            }
        }
        "compactness" => {
            let raw: RawCompactness = from_table(specific, ctx)?;
            let ratio_below = match (raw.ratio_below, raw.ratio_above) {
                (None, None) => Some(1e-2),
                (b, _) => b,
            };
            ExperimentParams::Compactness {
                z: shift(raw.z),
                index: raw.index.unwrap_or(50).max(1),
                ratio_below,
                ratio_above: raw.ratio_above,
            }
        }
        "essential-spectrum-proxy" => {
            let raw: RawEssential = from_table(specific, ctx)?;
            let enlarged = GridSpec {
                d: grid.d,
                n: check_refined(grid.n, raw.refine_n, ctx)?,
                half_length: raw.refine_half_length.map(Length::value).unwrap_or(2.0 * grid.half_length),
            };
            positive("refine_half_length", enlarged.half_length)?;
            ExperimentParams::EssentialSpectrum {
                lambda_max: positive("lambda_max", raw.lambda_max)?,
                enlarged,
                slack: raw.slack.unwrap_or(2),
            }
        }
        other => {
            return Err(CliError::Config(format!(
                "{ctx}: field `kind`: unknown experiment `{other}` (expected one of {EXPERIMENT_KINDS:?})"
            )))
        }
    })
}

/// Largest grid the experiment materializes densely.
fn dense_dof(e: &Experiment, fiber: usize) -> Option<usize> {
    let dof = |g: &GridSpec| g.n.pow(g.d as u32) * fiber;
    match &e.params {
        ExperimentParams::ResolventIdentities { .. } => None,
        ExperimentParams::Schatten(p) => match (p.check, p.route) {
            (SchattenCheck::NormStability, _) => None,
            (_, SpectrumRoute::Randomized { .. }) => None,
            _ => Some(dof(&e.grid.with_n(p.refine_n))),
        },
        ExperimentParams::WaveOperator(p) => {
            let base = dof(&e.grid);
            Some(p.oracle.map(|o| dof(&o).max(base)).unwrap_or(base))
        }
        ExperimentParams::WaveEquation(_) => Some(e.grid.n.pow(e.grid.d as u32) * 2),
        ExperimentParams::TraceConditions { refine_n, .. } => Some(dof(&e.grid.with_n(*refine_n))),
        ExperimentParams::EssentialSpectrum { enlarged, .. } => Some(dof(enlarged)),
        ExperimentParams::Compactness { .. } => Some(dof(&e.grid)),
    }
}

/// Checks that do not need any heavy computation: grid and media construction, dense
/// caps and the wrap-around guard.
fn validate_experiment(e: &Experiment) -> CliResult<()> {
    let ctx = format!("experiment `{}` (line {})", e.name, e.line);
    let fail = |what: String| CliError::Config(format!("{ctx}: {what}"));
    let symbol = MatrixSymbol::builtin(&e.symbol, e.grid.d).map_err(|err| fail(err.to_string()))?;
    let is_wave_eq = matches!(e.params, ExperimentParams::WaveEquation(_));
    if is_wave_eq && e.symbol != "wave" {
        return Err(fail("wave-equation experiments need symbol = \"wave\"".into()));
    }
    let fiber = if is_wave_eq { 1 } else { symbol.fiber() };
    let grid = e.grid.build(fiber).map_err(|err| fail(err.to_string()))?;
    let (m, m0) = if is_wave_eq {
        (e.medium.build_scalar(&grid), e.background.build_scalar(&grid))
    } else {
        (e.medium.build(&grid, &e.symbol), e.background.build(&grid, &e.symbol))
    };
    let m = m.map_err(|err| fail(format!("medium: {err}")))?;
    m0.map_err(|err| fail(format!("background: {err}")))?;
    if let Some(dof) = dense_dof(e, if is_wave_eq { 2 } else { fiber }) {
        medscat::dense::check_densifiable(dof).map_err(|err| fail(err.to_string()))?;
    }
    let wrap = |packet: &PacketSpec,
                t_max: f64,
                allow: bool,
                grid: &Grid,
                sym: &MatrixSymbol,
                c0: f64|
     -> CliResult<()> {
        let pk = packet.packet(grid.dim()).map_err(|err| fail(err.to_string()))?;
        let w = wrap_check(sym, grid, c0, &pk, t_max).map_err(|err| fail(err.to_string()))?;
        if !w.ok && !allow {
            return Err(fail(format!(
                "packet would wrap around the torus: v_max*T = {:.1} >= L - width = {:.1} (set allow_wrap = true to run anyway)",
                w.travel, w.allowed
            )));
        }
        Ok(())
    };
    match &e.params {
        ExperimentParams::WaveOperator(p) => {
            wrap(&p.packet, p.t_max, p.allow_wrap, &grid, &symbol, m.c0())?;
            if p.packet.packet(grid.dim()).map_err(|err| fail(err.to_string()))?.component >= grid.fiber() {
                return Err(fail("packet component out of range".into()));
            }
        }
        ExperimentParams::WaveEquation(p) => {
            let wgrid = grid.with_fiber(2).map_err(|err| fail(err.to_string()))?;
            wrap(&p.packet, p.t_max, p.allow_wrap, &wgrid, &symbol, m.c0().min(1.0))?;
        }
        ExperimentParams::Schatten(p) => {
            if p.operator == "weighted-resolvent"
                && p.z[1] == 0.0
                && matches!(p.route, SpectrumRoute::Randomized { .. })
            {
                return Err(fail("randomized estimates need a non-real shift".into()));
            }
            if let Some(w) = p.fit_window {
                let len = if p.operator == "weighted-resolvent" { grid.dof() } else { grid.num_points() };
                if w[1] > len {
                    return Err(fail(format!("field `fit_window` exceeds the {len} singular values")));
                }
            }
        }
        _ => {}
    }
    Ok(())
}

/// Parses and validates a scenario. Relative media files resolve against `base_dir`.
pub fn parse_scenario(text: &str, base_dir: &Path) -> CliResult<Scenario> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| toml_error(text, e))?;
    let base_grid = GridSpec { d: raw.grid.d, n: raw.grid.n, half_length: raw.grid.half_length.value() };
    let default_medium = RawMedium {
        family: Some("constant".into()),
        value: Some(1.0),
        amplitude: None,
        width: None,
        power: None,
        file: None,
    };
    let medium = Arc::new(medium_source(raw.medium.as_ref().unwrap_or(&default_medium), "medium", base_dir)?);
    let background =
        Arc::new(medium_source(raw.background.as_ref().unwrap_or(&default_medium), "background", base_dir)?);
    let defaults = ResolventConfig::default();
    let solver = ResolventConfig {
        tol: positive("solver.tol", raw.solver.tol.unwrap_or(defaults.tol))?,
        max_iter: raw.solver.max_iter.unwrap_or(defaults.max_iter).max(1),
        restart: raw.solver.restart.unwrap_or(defaults.restart).max(1),
        dense_fallback: raw.solver.dense_fallback.unwrap_or(defaults.dense_fallback),
    };
    if raw.experiments.is_empty() {
        return Err(CliError::Config("scenario declares no [[experiment]] sections".into()));
    }
    let mut names = BTreeSet::new();
    let mut experiments = Vec::new();
    for (index, spanned) in raw.experiments.iter().enumerate() {
        let line = line_of(text, spanned.span().start);
        let (common, specific) = split_table(spanned.get_ref());
        let ctx = format!("experiment #{} (line {line})", index + 1);
        let common: RawCommon = from_table(common, &ctx)?;
        let ctx = format!("experiment `{}` (line {line})", common.name);
        if common.name.is_empty() || !common.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(CliError::Config(format!(
                "{ctx}: field `name` must be non-empty ASCII letters, digits, - or _"
            )));
        }
        if !names.insert(common.name.clone()) {
            return Err(CliError::Config(format!("{ctx}: duplicate experiment name")));
        }
        let grid = GridSpec {
            d: common.d.unwrap_or(base_grid.d),
            n: common.n.unwrap_or(base_grid.n),
            half_length: common.half_length.map(Length::value).unwrap_or(base_grid.half_length),
        };
        let symbol_name = common.symbol.unwrap_or_else(|| raw.grid.symbol.clone());
        let symbol =
            MatrixSymbol::builtin(&symbol_name, grid.d).map_err(|e| CliError::Config(format!("{ctx}: {e}")))?;
        let params = kind_params(&common.kind, specific, &grid, &symbol, &ctx)?;
        let med = |o: &Option<RawMedium>, dflt: &Arc<MediumSource>, sec: &str| -> CliResult<Arc<MediumSource>> {
            match o {
                Some(r) => {
                    Ok(Arc::new(medium_source(r, sec, base_dir).map_err(|e| CliError::Config(format!("{ctx}: {e}")))?))
                }
                None => Ok(dflt.clone()),
            }
        };
        let exp = Experiment {
            name: common.name.clone(),
            index,
            line,
            grid,
            symbol: symbol_name,
            medium: med(&common.medium, &medium, "medium")?,
            background: med(&common.background, &background, "background")?,
            params,
        };
        validate_experiment(&exp)?;
        experiments.push(exp);
    }
    Ok(Scenario { name: raw.name, seed: raw.seed, output: raw.output, solver, experiments, source: text.to_string() })
}

/// Scenarios shipped with the binary, addressable by name.
pub const BUNDLED: [(&str, &str); 2] = [
    ("paper-suite", include_str!("../scenarios/paper-suite.toml")),
    ("null-perturbation", include_str!("../scenarios/null-perturbation.toml")),
];

/// Reads a scenario file, falling back to a bundled scenario when `path` names one
/// and no such file exists.
pub fn load_scenario(path: &Path) -> CliResult<Scenario> {
    if !path.exists() {
        if let Some((_, text)) = BUNDLED.iter().find(|(name, _)| Path::new(name) == path) {
            return parse_scenario(text, Path::new("."));
        }
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read scenario {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_scenario(&text, base)
}
