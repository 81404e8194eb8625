//! Declarative scenarios: a JSON description of a domain, coefficient and
//! solution fields, constants and acceptance thresholds, plus the pipelines
//! that run one scenario at one grid size.
//!
//! See `docs/scenario.md` at the repository root for the schema.

use std::collections::BTreeMap;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cauchy::{pompeiu_t, PompeiuMode, PompeiuPlan, SingularCellRule};
use crate::error::{Error, Result};
use crate::grid::{dbar, fmt_g17, norms, FieldBuilder, Grid, MatrixField, StencilMask};
use crate::moutard::{
    gauge_reduce, remark_check, theorem1_input_residual, transform_prop1, transform_theorem1, DEFAULT_COND_MAX,
};
use crate::potential::{imaginary_identity, integrability_defect, omega, omega_hat, OmegaOptions, PotentialField};
use crate::seeds::{
    solve_gauge, solve_lambda, solve_system1, solve_system2, solve_system3, IterationRecord, IterationSettings,
    SolveOutcome,
};
use crate::verify::{residual, rows_with_orders, ConvergenceRow, SystemFields};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Theorem1,
    Prop1,
    Gauge,
    Remark,
    DbarAccuracy,
    Potential,
    PompeiuDisk,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::Theorem1 => "theorem1",
            ScenarioKind::Prop1 => "prop1",
            ScenarioKind::Gauge => "gauge",
            ScenarioKind::Remark => "remark",
            ScenarioKind::DbarAccuracy => "dbar-accuracy",
            ScenarioKind::Potential => "potential",
            ScenarioKind::PompeiuDisk => "pompeiu-disk",
        }
    }

    /// Metrics produced at every level, in output order.
    pub fn metrics(&self) -> &'static [&'static str] {
        match self {
            ScenarioKind::Theorem1 => &[
                "psi_t_sys2",
                "psi_plus_t_sys3",
                "pivot_psi_t",
                "input_residual",
                "omega_path_defect",
            ],
            ScenarioKind::Prop1 => &["psi_t_sys6", "omega_hat_roundtrip", "pivot_psi_t", "input_residual"],
            ScenarioKind::Gauge => &["reduced_sys2", "input_sys1", "gauge_floor", "gauge_ratio"],
            ScenarioKind::Remark => &[
                "remark_residual",
                "omega_hat_roundtrip",
                "g_clean_off_singular",
                "remark_excluded",
            ],
            ScenarioKind::DbarAccuracy => &["dbar_error"],
            ScenarioKind::Potential => &["skew_real_defect", "path_defect", "integrability_defect"],
            ScenarioKind::PompeiuDisk => &["disk_error"],
        }
    }

    fn required_fields(&self) -> &'static [&'static str] {
        match self {
            ScenarioKind::Theorem1 => &["F", "F_plus", "Psi", "Psi_plus"],
            ScenarioKind::Prop1 => &["F", "F_plus", "Psi"],
            ScenarioKind::Gauge => &["Psi"],
            ScenarioKind::Remark => &["F", "F_plus", "Psi", "Lambda"],
            ScenarioKind::DbarAccuracy => &["Psi"],
            ScenarioKind::Potential => &["Psi", "Psi_plus"],
            ScenarioKind::PompeiuDisk => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveKind {
    System1,
    System2,
    System3,
    Gauge,
    Lambda,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveDirective {
    pub solve: SolveKind,
    #[serde(default)]
    pub seed: Option<FieldBuilder>,
}

/// A field is either evaluated from a builder or produced by a solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Value", into = "Value")]
pub enum FieldSpec {
    Builder(FieldBuilder),
    Solve(SolveDirective),
}

impl TryFrom<Value> for FieldSpec {
    type Error = String;

    fn try_from(v: Value) -> std::result::Result<Self, String> {
        let obj = v.as_object().ok_or("a field must be a JSON object")?;
        match (obj.contains_key("kind"), obj.contains_key("solve")) {
            (true, true) => Err("a field takes either \"kind\" (builder) or \"solve\", not both".into()),
            (false, false) => Err("a field needs \"kind\" (builder) or \"solve\"".into()),
            (true, false) => serde_json::from_value(v)
                .map(FieldSpec::Builder)
                .map_err(|e| e.to_string()),
            (false, true) => serde_json::from_value(v)
                .map(FieldSpec::Solve)
                .map_err(|e| e.to_string()),
        }
    }
}

impl From<FieldSpec> for Value {
    fn from(f: FieldSpec) -> Value {
        let r = match f {
            FieldSpec::Builder(b) => serde_json::to_value(b),
            FieldSpec::Solve(s) => serde_json::to_value(s),
        };
        r.expect("field specs serialize")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fields {
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<FieldSpec>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<FieldSpec>,
    #[serde(rename = "F", default, skip_serializing_if = "Option::is_none")]
    pub f: Option<FieldSpec>,
    #[serde(rename = "F_plus", default, skip_serializing_if = "Option::is_none")]
    pub f_plus: Option<FieldSpec>,
    #[serde(rename = "Psi", default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<FieldSpec>,
    #[serde(rename = "Psi_plus", default, skip_serializing_if = "Option::is_none")]
    pub psi_plus: Option<FieldSpec>,
    #[serde(rename = "Lambda", default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<FieldSpec>,
}

impl Fields {
    pub fn get(&self, name: &str) -> Option<&FieldSpec> {
        match name {
            "A" => self.a.as_ref(),
            "B" => self.b.as_ref(),
            "F" => self.f.as_ref(),
            "F_plus" => self.f_plus.as_ref(),
            "Psi" => self.psi.as_ref(),
            "Psi_plus" => self.psi_plus.as_ref(),
            "Lambda" => self.lambda.as_ref(),
            _ => None,
        }
    }

    fn iter(&self) -> impl Iterator<Item = (&'static str, &FieldSpec)> {
        [
            ("A", &self.a),
            ("B", &self.b),
            ("F", &self.f),
            ("F_plus", &self.f_plus),
            ("Psi", &self.psi),
            ("Psi_plus", &self.psi_plus),
            ("Lambda", &self.lambda),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k, v)))
    }
}

fn zero_cx() -> [f64; 2] {
    [0.0, 0.0]
}

/// Integration constants and representatives. Every `c*` is the real `c`
/// of a basepoint value `i c I`; shifts add `s I` to a Pompeiu-built field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Constants {
    pub c: f64,
    pub c_psi: f64,
    pub c_psi_plus: f64,
    #[serde(default = "zero_cx")]
    pub omega_hat_shift: [f64; 2],
    #[serde(default = "zero_cx")]
    pub omega_hat_psi_shift: [f64; 2],
    #[serde(default = "zero_cx")]
    pub lambda_shift: [f64; 2],
    /// Potentials warn when the integrability defect of their inputs
    /// exceeds `100 * consistency_tol`.
    pub consistency_tol: f64,
    pub disk_radius: f64,
    pub eval_radius: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Constants {
            c: 10.0,
            c_psi: 0.0,
            c_psi_plus: 0.0,
            omega_hat_shift: [0.0, 0.0],
            omega_hat_psi_shift: [0.0, 0.0],
            lambda_shift: [0.0, 0.0],
            consistency_tol: 1e-4,
            disk_radius: 1.0,
            eval_radius: 0.7,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PompeiuConfig {
    pub mode: PompeiuMode,
    pub singular_cell: SingularCellRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Threshold {
    pub metric: String,
    /// Restrict value checks to this size; all levels otherwise.
    #[serde(default)]
    pub at_n: Option<usize>,
    #[serde(default)]
    pub max_value: Option<f64>,
    #[serde(default)]
    pub min_value: Option<f64>,
    /// Bounds on every order estimate of the metric.
    #[serde(default)]
    pub min_order: Option<f64>,
    #[serde(default)]
    pub max_order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldOutput {
    pub field: String,
    pub path: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    /// Convergence table; `<name>-convergence.csv` when absent.
    pub csv: Option<String>,
    /// Per-level report rows; `<name>-report.csv` when absent.
    pub report: Option<String>,
    /// Write one iteration-history CSV per solved field at the finest size.
    pub history: bool,
    /// Heatmap of a finest-level field (PPM plus `.txt` sidecar).
    pub heatmap: Option<FieldOutput>,
    /// MFIELD dumps of finest-level fields.
    pub mfields: Vec<FieldOutput>,
    /// Input field evaluated by `dump-field` at the first size.
    pub dump: Option<FieldOutput>,
}

fn default_n() -> usize {
    1
}

fn default_cond_max() -> f64 {
    DEFAULT_COND_MAX
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub spec: u32,
    pub name: String,
    pub kind: ScenarioKind,
    pub domain: Domain,
    #[serde(default = "default_n")]
    pub n: usize,
    pub sizes: Vec<usize>,
    #[serde(default)]
    pub fields: Fields,
    #[serde(default)]
    pub constants: Constants,
    #[serde(default)]
    pub iteration: IterationSettings,
    #[serde(default)]
    pub pompeiu: PompeiuConfig,
    #[serde(default = "default_cond_max")]
    pub cond_max: f64,
    /// Physical distance from the boundary excluded from residual norms
    /// (never less than the stencil margin).
    #[serde(default)]
    pub residual_inset: f64,
    #[serde(default)]
    pub thresholds: Vec<Threshold>,
    #[serde(default)]
    pub outputs: Outputs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub grid: String,
    pub residual_sup: f64,
    pub residual_l2: f64,
    pub min_abs_det: f64,
    pub max_cond: f64,
}

/// Everything one pipeline run produces at one size.
#[derive(Debug, Clone)]
pub struct LevelOutcome {
    pub n: usize,
    pub h: f64,
    pub metrics: Vec<(String, f64)>,
    pub report: ReportRow,
    pub fields: BTreeMap<String, MatrixField>,
    pub potentials: BTreeMap<String, PotentialField>,
    pub histories: BTreeMap<String, Vec<IterationRecord>>,
    pub warnings: Vec<String>,
}

impl LevelOutcome {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(m, _)| m == name).map(|&(_, v)| v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdCheck {
    pub label: String,
    pub passed: bool,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.spec != SCHEMA_VERSION {
            return cfg(format!(
                "unsupported spec version {} (expected {SCHEMA_VERSION})",
                self.spec
            ));
        }
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        {
            return cfg(format!(
                "scenario name {:?} must be non-empty [A-Za-z0-9._-]",
                self.name
            ));
        }
        if self.n == 0 {
            return cfg("n must be at least 1".into());
        }
        if self.sizes.is_empty() {
            return cfg("sizes must not be empty".into());
        }
        for w in self.sizes.windows(2) {
            if w[1] != 2 * w[0] - 1 {
                return cfg(format!(
                    "grid sizes must refine as n -> 2n - 1, got {} -> {}",
                    w[0], w[1]
                ));
            }
        }
        if let Some(&n) = self.sizes.iter().find(|&&n| n % 2 == 0 || n < Grid::MIN_NODES) {
            return cfg(format!("grid size {n} must be odd and at least {}", Grid::MIN_NODES));
        }
        Grid::new(
            self.domain.x0,
            self.domain.x1,
            self.domain.y0,
            self.domain.y1,
            self.sizes[0],
            self.sizes[0],
        )?;
        if !(self.cond_max > 1.0) || !self.cond_max.is_finite() {
            return cfg(format!("cond_max must be finite and > 1, got {}", self.cond_max));
        }
        if !(self.residual_inset >= 0.0) {
            return cfg("residual_inset must be >= 0".into());
        }
        self.iteration.validate()?;
        let k = &self.constants;
        if !(k.consistency_tol > 0.0) || !(k.disk_radius > 0.0) || !(k.eval_radius > 0.0) {
            return cfg("consistency_tol, disk_radius and eval_radius must be positive".into());
        }
        if self.kind == ScenarioKind::PompeiuDisk && self.n != 1 {
            return cfg("pompeiu-disk scenarios are scalar (n = 1)".into());
        }
        for name in self.kind.required_fields() {
            if self.fields.get(name).is_none() {
                return cfg(format!("{} scenarios need field {name}", self.kind.as_str()));
            }
        }
        for (name, spec) in self.fields.iter() {
            if let FieldSpec::Solve(d) = spec {
                if matches!(name, "A" | "B") {
                    return cfg(format!("coefficient {name} must be a builder"));
                }
                let needs_seed = matches!(d.solve, SolveKind::System1 | SolveKind::System2 | SolveKind::System3);
                if needs_seed != d.seed.is_some() {
                    return cfg(format!(
                        "field {name}: solve {:?} {} a seed",
                        d.solve,
                        if needs_seed { "needs" } else { "takes no" }
                    ));
                }
                if d.solve == SolveKind::Lambda && self.fields.f_plus.is_none() {
                    return cfg(format!("field {name}: solve lambda needs F_plus"));
                }
                if d.solve == SolveKind::Lambda && name == "F_plus" {
                    return cfg("F_plus cannot be solved as lambda".into());
                }
            }
        }
        if self.kind == ScenarioKind::DbarAccuracy {
            match self.fields.psi.as_ref() {
                Some(FieldSpec::Builder(b)) if b.is_differentiable() => {}
                _ => return cfg("dbar-accuracy needs Psi as a differentiable builder".into()),
            }
        }
        let known = self.kind.metrics();
        for t in &self.thresholds {
            if !known.contains(&t.metric.as_str()) {
                return cfg(format!(
                    "unknown metric {:?} for {} scenarios (known: {})",
                    t.metric,
                    self.kind.as_str(),
                    known.join(", ")
                ));
            }
            if let Some(n) = t.at_n {
                if !self.sizes.contains(&n) {
                    return cfg(format!("threshold at_n = {n} is not one of the sizes"));
                }
            }
        }
        Ok(())
    }

    pub fn grid(&self, size: usize) -> Result<Grid> {
        let d = &self.domain;
        Grid::new(d.x0, d.x1, d.y0, d.y1, size, size)
    }

    pub fn region(&self, grid: &Grid) -> StencilMask {
        StencilMask::inset(grid, self.residual_inset)
    }

    /// Run the pipeline once per size; failures carry the size.
    pub fn run_levels(&self, sizes: &[usize]) -> Result<Vec<LevelOutcome>> {
        sizes
            .iter()
            .map(|&n| {
                log::info!("{}: running n = {n}", self.name);
                self.run_level(n).map_err(|e| Error::Level { n, source: Box::new(e) })
            })
            .collect()
    }

    pub fn run_level(&self, size: usize) -> Result<LevelOutcome> {
        let grid = self.grid(size)?;
        let mut ctx = Ctx::new(self, grid);
        let mut out = LevelOutcome {
            n: size,
            h: grid.hx,
            metrics: Vec::new(),
            report: ReportRow {
                grid: format!("{}x{}", grid.nx, grid.ny),
                residual_sup: f64::NAN,
                residual_l2: f64::NAN,
                min_abs_det: f64::NAN,
                max_cond: f64::NAN,
            },
            fields: BTreeMap::new(),
            potentials: BTreeMap::new(),
            histories: BTreeMap::new(),
            warnings: Vec::new(),
        };
        match self.kind {
            ScenarioKind::Theorem1 => self.theorem1(&mut ctx, &mut out)?,
            ScenarioKind::Prop1 => self.prop1(&mut ctx, &mut out)?,
            ScenarioKind::Gauge => self.gauge(&mut ctx, &mut out)?,
            ScenarioKind::Remark => self.remark(&mut ctx, &mut out)?,
            ScenarioKind::DbarAccuracy => self.dbar_accuracy(&mut ctx, &mut out)?,
            ScenarioKind::Potential => self.potential(&mut ctx, &mut out)?,
            ScenarioKind::PompeiuDisk => self.pompeiu_disk(&mut ctx, &mut out)?,
        }
        for (k, v) in ctx.fields {
            out.fields.entry(k).or_insert(v);
        }
        out.histories = ctx.histories;
        for w in out.potentials.values().flat_map(|p| p.warnings.iter()) {
            out.warnings.push(w.clone());
        }
        for w in &out.warnings {
            log::warn!("{} n = {size}: {w}", self.name);
        }
        Ok(out)
    }

    /// Evaluate one input field (builder or solve) at one size.
    pub fn input_field(&self, name: &str, size: usize) -> Result<MatrixField> {
        if self.fields.get(name).is_none() {
            return Err(Error::Config(format!("scenario has no field {name}")));
        }
        let mut ctx = Ctx::new(self, self.grid(size)?);
        ctx.field(name)
    }

    fn omega_opts(&self, grid: &Grid, c: f64) -> OmegaOptions {
        OmegaOptions {
            basepoint: grid.center_node(),
            c0: imaginary_identity(self.n, c),
            consistency_tol: Some(self.constants.consistency_tol),
        }
    }

    fn shifted(&self, f: MatrixField, s: [f64; 2]) -> MatrixField {
        if s == [0.0, 0.0] {
            return f;
        }
        let m = scaled_identity(self.n, Complex64::new(s[0], s[1]));
        f.add_constant(&m)
    }

    fn theorem1(&self, ctx: &mut Ctx, out: &mut LevelOutcome) -> Result<()> {
        let grid = ctx.grid;
        let region = self.region(&grid);
        let b = ctx.field("B")?;
        let f = ctx.field("F")?;
        let fp = ctx.field("F_plus")?;
        let psi = ctx.field("Psi")?;
        let pp = ctx.field("Psi_plus")?;
        let k = &self.constants;
        let w_ff = omega(&f, &fp, &self.omega_opts(&grid, k.c))?;
        let w_psi = omega(&psi, &fp, &self.omega_opts(&grid, k.c_psi))?;
        let w_pp = omega(&f, &pp, &self.omega_opts(&grid, k.c_psi_plus))?;
        let r = transform_theorem1(&b, &f, &fp, &psi, &pp, &w_ff, &w_psi, &w_pp, self.cond_max)?;
        let r2 = residual(
            SystemFields::Sys2 {
                b: &r.b_t,
                psi: &r.psi_t,
            },
            region,
        )?;
        let r3 = residual(
            SystemFields::Sys3 {
                b: &r.b_t,
                psi_plus: &r.psi_plus_t,
            },
            region,
        )?;
        let pivot = transform_theorem1(&b, &f, &fp, &f, &pp, &w_ff, &w_ff, &w_pp, self.cond_max)?;
        let input = theorem1_input_residual(&b, &f, &fp, &psi, &pp, region)?;
        let path = [&w_ff, &w_psi, &w_pp].iter().map(|w| w.path_defect).fold(0.0, f64::max);
        out.metrics = vec![
            ("psi_t_sys2".into(), r2.sup),
            ("psi_plus_t_sys3".into(), r3.sup),
            ("pivot_psi_t".into(), pivot.psi_t.sup_norm()),
            ("input_residual".into(), input),
            ("omega_path_defect".into(), path),
        ];
        out.report.residual_sup = r2.sup.max(r3.sup);
        out.report.residual_l2 = r2.l2.max(r3.l2);
        out.report.min_abs_det = r.invertibility.min_abs_det;
        out.report.max_cond = r.invertibility.max_cond;
        out.fields.insert("psi_t".into(), r.psi_t);
        out.fields.insert("psi_plus_t".into(), r.psi_plus_t);
        out.fields.insert("b_t".into(), r.b_t);
        out.potentials.insert("omega_ff".into(), w_ff);
        out.potentials.insert("omega_psi_f".into(), w_psi);
        out.potentials.insert("omega_f_psi_plus".into(), w_pp);
        Ok(())
    }

    fn prop1(&self, ctx: &mut Ctx, out: &mut LevelOutcome) -> Result<()> {
        let grid = ctx.grid;
        let region = self.region(&grid);
        let a = ctx.field("A")?;
        let f = ctx.field("F")?;
        let fp = ctx.field("F_plus")?;
        let psi = ctx.field("Psi")?;
        let plan = ctx.plan();
        let k = &self.constants;
        let wh_ff = self.shifted(omega_hat(&f, &fp, plan)?, k.omega_hat_shift);
        let wh_psi = self.shifted(omega_hat(&psi, &fp, plan)?, k.omega_hat_psi_shift);
        let r = transform_prop1(&a, &f, &fp, &psi, &wh_ff, &wh_psi, self.cond_max)?;
        let r6 = residual(
            SystemFields::Sys6 {
                a: &r.a_t,
                psi: &r.psi_t,
            },
            region,
        )?;
        let roundtrip = norms(&dbar(&wh_ff).sub(&fp.matmul(&f)?)?, &region)?.sup;
        let pivot = transform_prop1(&a, &f, &fp, &f, &wh_ff, &wh_ff, self.cond_max)?;
        let input = residual(SystemFields::Sys6 { a: &a, psi: &f }, region)?
            .sup
            .max(residual(SystemFields::Sys6 { a: &a, psi: &psi }, region)?.sup);
        out.metrics = vec![
            ("psi_t_sys6".into(), r6.sup),
            ("omega_hat_roundtrip".into(), roundtrip),
            ("pivot_psi_t".into(), pivot.psi_t.sup_norm()),
            ("input_residual".into(), input),
        ];
        out.report.residual_sup = r6.sup;
        out.report.residual_l2 = r6.l2;
        out.report.min_abs_det = r.invertibility.min_abs_det;
        out.report.max_cond = r.invertibility.max_cond;
        out.fields.insert("psi_t".into(), r.psi_t);
        out.fields.insert("a_t".into(), r.a_t);
        out.fields.insert("omega_hat_ff".into(), wh_ff);
        out.fields.insert("omega_hat_psi_f".into(), wh_psi);
        Ok(())
    }

    fn gauge(&self, ctx: &mut Ctx, out: &mut LevelOutcome) -> Result<()> {
        let grid = ctx.grid;
        let region = self.region(&grid);
        let a = ctx.field("A")?;
        let b = ctx.field("B")?;
        let psi = ctx.field("Psi")?;
        let g = ctx.gauge()?;
        let red = gauge_reduce(&b, &psi, &g, self.cond_max)?;
        let reduced = residual(
            SystemFields::Sys2 {
                b: &red.b_t,
                psi: &red.psi_t,
            },
            region,
        )?;
        let input = residual(
            SystemFields::Sys1 {
                a: &a,
                b: &b,
                psi: &psi,
            },
            region,
        )?
        .sup;
        // Reduced residual = g^-1 (input residual - r_g psi_t) with
        // r_g = dbar g + A g, so |r_g psi_t| is the floor set by g itself.
        let r_g = dbar(&g).add(&a.matmul(&g)?)?;
        let floor = norms(&r_g.matmul(&red.psi_t)?, &region)?.sup;
        out.metrics = vec![
            ("reduced_sys2".into(), reduced.sup),
            ("input_sys1".into(), input),
            ("gauge_floor".into(), floor),
            ("gauge_ratio".into(), reduced.sup / (input + floor)),
        ];
        out.report.residual_sup = reduced.sup;
        out.report.residual_l2 = reduced.l2;
        out.report.min_abs_det = red.invertibility.min_abs_det;
        out.report.max_cond = red.invertibility.max_cond;
        out.fields.insert("psi_t".into(), red.psi_t);
        out.fields.insert("b_t".into(), red.b_t);
        Ok(())
    }

    fn remark(&self, ctx: &mut Ctx, out: &mut LevelOutcome) -> Result<()> {
        let grid = ctx.grid;
        let region = self.region(&grid);
        let a = ctx.field("A")?;
        let f = ctx.field("F")?;
        let fp = ctx.field("F_plus")?;
        let psi = ctx.field("Psi")?;
        let lambda = self.shifted(ctx.field("Lambda")?, self.constants.lambda_shift);
        let wh = self.shifted(omega_hat(&f, &fp, ctx.plan())?, self.constants.omega_hat_shift);
        let r = remark_check(&a, &f, &fp, &psi, &wh, &lambda, region, self.cond_max)?;
        let roundtrip = norms(&dbar(&wh).sub(&fp.matmul(&f)?)?, &region)?.sup;
        out.metrics = vec![
            ("remark_residual".into(), r.residual_sup),
            ("omega_hat_roundtrip".into(), roundtrip),
            (
                "g_clean_off_singular".into(),
                if r.clean_off_singular_set() { 1.0 } else { 0.0 },
            ),
            ("remark_excluded".into(), r.excluded as f64),
        ];
        out.report.residual_sup = r.residual_sup;
        out.report.residual_l2 = r.residual_l2;
        out.report.min_abs_det = r.invertibility.min_abs_det;
        out.report.max_cond = r.invertibility.max_cond;
        out.fields.insert("g".into(), r.g);
        out.fields.insert("a_t".into(), r.a_t);
        out.fields.insert("omega_hat_ff".into(), wh);
        out.fields.insert("Lambda".into(), lambda);
        Ok(())
    }

    fn dbar_accuracy(&self, ctx: &mut Ctx, out: &mut LevelOutcome) -> Result<()> {
        let grid = ctx.grid;
        let Some(FieldSpec::Builder(b)) = self.fields.psi.as_ref() else {
            return Err(Error::Config("dbar-accuracy needs Psi as a builder".into()));
        };
        let psi = ctx.field("Psi")?;
        let exact = b.build_dbar(grid, self.n)?;
        let err = norms(&dbar(&psi).sub(&exact)?, &self.region(&grid))?;
        out.metrics = vec![("dbar_error".into(), err.sup)];
        out.report.residual_sup = err.sup;
        out.report.residual_l2 = err.l2;
        Ok(())
    }

    fn potential(&self, ctx: &mut Ctx, out: &mut LevelOutcome) -> Result<()> {
        let grid = ctx.grid;
        let phi = ctx.field("Psi")?;
        let phi_plus = ctx.field("Psi_plus")?;
        let w = omega(&phi, &phi_plus, &self.omega_opts(&grid, self.constants.c))?;
        let integ = integrability_defect(&phi, &phi_plus)?;
        out.metrics = vec![
            ("skew_real_defect".into(), w.skew_real_defect),
            ("path_defect".into(), w.path_defect),
            ("integrability_defect".into(), integ),
        ];
        out.report.residual_sup = w.path_defect;
        out.report.residual_l2 = f64::NAN;
        out.potentials.insert("omega".into(), w);
        Ok(())
    }

    fn pompeiu_disk(&self, ctx: &mut Ctx, out: &mut LevelOutcome) -> Result<()> {
        let grid = ctx.grid;
        let r = self.constants.disk_radius;
        let chi = MatrixField::scalar_fn(grid, 1, |z| Complex64::new(if z.norm() <= r { 1.0 } else { 0.0 }, 0.0));
        let t = pompeiu_t(&chi, ctx.plan());
        let err = (0..grid.len())
            .filter(|&k| grid.node_at(k).norm() <= self.constants.eval_radius)
            .map(|k| (t.at(k)[0] - grid.node_at(k).conj()).norm())
            .fold(0.0, f64::max);
        out.metrics = vec![("disk_error".into(), err)];
        out.report.residual_sup = err;
        out.report.residual_l2 = f64::NAN;
        out.fields.insert("t_chi".into(), t);
        Ok(())
    }
}

fn scaled_identity(n: usize, s: Complex64) -> Vec<Complex64> {
    let mut m = vec![Complex64::new(0.0, 0.0); n * n];
    for d in 0..n {
        m[d * n + d] = s;
    }
    m
}

/// Per-level state: lazily built plan and memoized input fields.
struct Ctx<'a> {
    scenario: &'a Scenario,
    grid: Grid,
    plan: Option<PompeiuPlan>,
    fields: BTreeMap<String, MatrixField>,
    histories: BTreeMap<String, Vec<IterationRecord>>,
}

impl<'a> Ctx<'a> {
    fn new(scenario: &'a Scenario, grid: Grid) -> Self {
        Ctx {
            scenario,
            grid,
            plan: None,
            fields: BTreeMap::new(),
            histories: BTreeMap::new(),
        }
    }

    fn plan(&mut self) -> &PompeiuPlan {
        let p = &self.scenario.pompeiu;
        let grid = self.grid;
        self.plan
            .get_or_insert_with(|| PompeiuPlan::new(grid, p.mode, p.singular_cell))
    }

    /// Field by name; missing coefficients default to zero.
    fn field(&mut self, name: &str) -> Result<MatrixField> {
        if let Some(f) = self.fields.get(name) {
            return Ok(f.clone());
        }
        let s = self.scenario;
        let n = s.n;
        let field = match s.fields.get(name) {
            None if matches!(name, "A" | "B") => MatrixField::zeros(self.grid, n),
            None => return Err(Error::Config(format!("scenario has no field {name}"))),
            Some(FieldSpec::Builder(b)) => b.build(self.grid, n)?,
            Some(FieldSpec::Solve(d)) => {
                let d = d.clone();
                let outcome = self.solve(&d)?;
                self.histories.insert(name.to_string(), outcome.history);
                outcome.field
            }
        };
        self.fields.insert(name.to_string(), field.clone());
        Ok(field)
    }

    fn seed(&self, d: &SolveDirective) -> Result<MatrixField> {
        let b = d
            .seed
            .as_ref()
            .ok_or_else(|| Error::Config("solve directive needs a seed".into()))?;
        b.build(self.grid, self.scenario.n)
    }

    fn solve(&mut self, d: &SolveDirective) -> Result<SolveOutcome> {
        let s: IterationSettings = self.scenario.iteration;
        match d.solve {
            SolveKind::System1 => {
                let (a, b, h) = (self.field("A")?, self.field("B")?, self.seed(d)?);
                solve_system1(&a, &b, &h, self.plan(), &s)
            }
            SolveKind::System2 => {
                let (b, h) = (self.field("B")?, self.seed(d)?);
                solve_system2(&b, &h, self.plan(), &s)
            }
            SolveKind::System3 => {
                let (b, h) = (self.field("B")?, self.seed(d)?);
                solve_system3(&b, &h, self.plan(), &s)
            }
            SolveKind::Gauge => Ok(self.gauge_outcome()?),
            SolveKind::Lambda => {
                let (a, fp) = (self.field("A")?, self.field("F_plus")?);
                solve_lambda(&a, &fp, self.plan(), &s)
            }
        }
    }

    fn gauge_outcome(&mut self) -> Result<SolveOutcome> {
        let a = self.field("A")?;
        let s = self.scenario.iteration;
        let cond_max = self.scenario.cond_max;
        Ok(solve_gauge(&a, self.plan(), &s, cond_max)?.solve)
    }

    fn gauge(&mut self) -> Result<MatrixField> {
        if let Some(g) = self.fields.get("g") {
            return Ok(g.clone());
        }
        let out = self.gauge_outcome()?;
        self.histories.insert("g".into(), out.history);
        self.fields.insert("g".into(), out.field.clone());
        Ok(out.field)
    }
}

/// One row per (metric, level), metrics in pipeline order, levels ascending.
pub fn study_rows(levels: &[LevelOutcome]) -> Vec<ConvergenceRow> {
    let Some(first) = levels.first() else {
        return Vec::new();
    };
    let mut rows = Vec::new();
    for (name, _) in &first.metrics {
        let series: Vec<(usize, f64, f64)> = levels
            .iter()
            .map(|l| (l.n, l.h, l.metric(name).unwrap_or(f64::NAN)))
            .collect();
        rows.extend(rows_with_orders(name, &series));
    }
    rows
}

fn g(x: f64) -> String {
    format!("{x:.3e}")
}

/// Check every threshold against the study; one entry per elementary check.
pub fn evaluate_thresholds(thresholds: &[Threshold], rows: &[ConvergenceRow]) -> Vec<ThresholdCheck> {
    let mut checks = Vec::new();
    for t in thresholds {
        let series: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.metric == t.metric).collect();
        let at: Vec<&&ConvergenceRow> = series.iter().filter(|r| t.at_n.is_none_or(|n| r.n == n)).collect();
        if let Some(max) = t.max_value {
            for r in &at {
                checks.push(ThresholdCheck {
                    label: format!("{} <= {} at n={}: {}", t.metric, g(max), r.n, g(r.value)),
                    passed: r.value <= max,
                });
            }
        }
        if let Some(min) = t.min_value {
            for r in &at {
                checks.push(ThresholdCheck {
                    label: format!("{} >= {} at n={}: {}", t.metric, g(min), r.n, g(r.value)),
                    passed: r.value >= min,
                });
            }
        }
        if t.min_order.is_some() || t.max_order.is_some() {
            let lo = t.min_order.unwrap_or(f64::NEG_INFINITY);
            let hi = t.max_order.unwrap_or(f64::INFINITY);
            for r in series.iter().skip(1) {
                let (passed, shown) = match r.order_est {
                    Some(o) => (o >= lo && o <= hi, format!("{o:.3}")),
                    None => (false, "undefined".to_string()),
                };
                checks.push(ThresholdCheck {
                    label: format!("{} order in [{lo}, {hi}] at n={}: {shown}", t.metric, r.n),
                    passed,
                });
            }
        }
    }
    checks
}

/// `scenario,grid,residual_sup,residual_l2,min_abs_det,max_cond`
pub fn write_report_csv<W: Write>(scenario: &str, levels: &[LevelOutcome], mut w: W) -> Result<()> {
    writeln!(w, "scenario,grid,residual_sup,residual_l2,min_abs_det,max_cond")?;
    for l in levels {
        let r = &l.report;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            scenario,
            r.grid,
            fmt_g17(r.residual_sup),
            fmt_g17(r.residual_l2),
            fmt_g17(r.min_abs_det),
            fmt_g17(r.max_cond)
        )?;
    }
    Ok(())
}
