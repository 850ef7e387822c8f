//! Experiment configuration: a JSON document resolved into core types.

use std::collections::HashMap;
use std::path::Path;

use causal_sde::builtin::ChemParams;
use causal_sde::system::default_labels;
use causal_sde::{
    build_chem_system, load_builtin, ou_to_system, parse_expression, parse_expression_with, CoefficientField, Grid,
    InitialLaw, InterventionSpec, JumpAtom, LevyTriplet, Matrix, OuModel, SdeSystem,
};
use serde::Deserialize;

use crate::error::{config_err, Failure};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    /// Driver for `expression` systems.
    #[serde(default)]
    pub driver: Option<DriverSpec>,
    /// Overrides the system's own initial law.
    #[serde(default)]
    pub initial: Option<InitialSpec>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub n_paths: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub intervention: Option<InterventionDecl>,
    #[serde(default)]
    pub test: Option<TestSpec>,
    /// Second system for `check-identify`; inherits `driver` and `initial`.
    #[serde(default)]
    pub system_b: Option<SecondSystem>,
    #[serde(default)]
    pub generator: Option<GeneratorSpec>,
    #[serde(default)]
    pub convergence: Option<ConvergenceSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Builtin {
        name: String,
        #[serde(default)]
        params: Option<ChemParams>,
    },
    Ou {
        #[serde(default)]
        level: Option<Vec<f64>>,
        reversion: Vec<Vec<f64>>,
        sigma: Vec<Vec<f64>>,
        #[serde(default)]
        labels: Option<Vec<String>>,
    },
    Chem {
        stoichiometry: Vec<Vec<f64>>,
        rates: Vec<String>,
        #[serde(default)]
        constants: HashMap<String, f64>,
        #[serde(default)]
        labels: Option<Vec<String>>,
    },
    Expression {
        coefficients: Vec<Vec<String>>,
        #[serde(default)]
        labels: Option<Vec<String>>,
    },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecondSystem {
    pub system: SystemSpec,
    #[serde(default)]
    pub driver: Option<DriverSpec>,
    #[serde(default)]
    pub initial: Option<InitialSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverSpec {
    Triplet {
        alpha: Vec<f64>,
        cov: Vec<Vec<f64>>,
        #[serde(default)]
        jumps: Vec<JumpSpec>,
        #[serde(default = "one")]
        trunc_radius: f64,
    },
    Brownian {
        dim: usize,
    },
    TimeAndBrownian {
        dim: usize,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpSpec {
    pub rate: f64,
    pub location: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum InitialSpec {
    Fixed(Vec<f64>),
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub horizon: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionDecl {
    /// A coordinate label, or `Z<k>` for a driver coordinate.
    pub target: String,
    pub value: ZetaDecl,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum ZetaDecl {
    Constant(f64),
    Expression(String),
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSpec {
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub n_permutations: Option<usize>,
    #[serde(default)]
    pub tol: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    #[serde(default)]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub r_e: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSpec {
    #[serde(default)]
    pub deltas: Option<Vec<f64>>,
}

/// Command-line overrides applied on top of the config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub delta: Option<f64>,
    pub horizon: Option<f64>,
    pub alpha: Option<f64>,
}

pub const DEFAULT_HORIZON: f64 = 1.0;
pub const DEFAULT_DELTA: f64 = 0.01;

/// Configuration with every reference resolved.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub system: SdeSystem<f64>,
    pub ou: Option<OuModel<f64>>,
    pub system_b: Option<SdeSystem<f64>>,
    pub grid: Option<Grid<f64>>,
    /// Explicit path count; commands pick their own default otherwise.
    pub n_paths: Option<usize>,
    pub seed: u64,
    pub intervention: Option<InterventionSpec<f64>>,
    pub test: TestSpec,
    pub generator: GeneratorSpec,
    pub convergence: ConvergenceSpec,
}

impl Resolved {
    /// The configured grid, or the default one when none is given.
    pub fn grid_or_default(&self) -> Result<Grid<f64>, Failure> {
        match self.grid {
            Some(g) => Ok(g),
            None => Grid::new(DEFAULT_HORIZON, DEFAULT_DELTA).map_err(config_err),
        }
    }

    pub fn paths_or(&self, default: usize) -> usize {
        self.n_paths.unwrap_or(default)
    }

    pub fn require_intervention(&self) -> Result<&InterventionSpec<f64>, Failure> {
        self.intervention
            .as_ref()
            .ok_or_else(|| Failure::Config("this command needs an `intervention`".into()))
    }
}

pub fn load(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<ExperimentConfig, Failure> {
    serde_json::from_str(text).map_err(|e| Failure::Config(format!("invalid config: {e}")))
}

/// Config that only names a builtin system.
pub fn builtin_config(name: &str) -> ExperimentConfig {
    ExperimentConfig {
        system: SystemSpec::Builtin {
            name: name.to_owned(),
            params: None,
        },
        driver: None,
        initial: None,
        grid: None,
        n_paths: None,
        seed: None,
        intervention: None,
        test: None,
        system_b: None,
        generator: None,
        convergence: None,
    }
}

pub fn resolve(cfg: &ExperimentConfig, over: &Overrides) -> Result<Resolved, Failure> {
    let (system, ou, default_spec) = build_system(&cfg.system, cfg.driver.as_ref(), cfg.initial.as_ref())?;
    let system_b = match &cfg.system_b {
        Some(b) => {
            let driver = b.driver.as_ref().or(cfg.driver.as_ref());
            let initial = b.initial.as_ref().or(cfg.initial.as_ref());
            Some(build_system(&b.system, driver, initial)?.0)
        }
        None => None,
    };
    let grid = {
        let base = cfg.grid;
        let horizon = over.horizon.or(base.map(|g| g.horizon));
        let delta = over.delta.or(base.map(|g| g.delta));
        match (horizon, delta) {
            (None, None) => None,
            (h, d) => Some(
                Grid::new(h.unwrap_or(DEFAULT_HORIZON), d.unwrap_or(DEFAULT_DELTA)).map_err(config_err)?,
            ),
        }
    };
    let intervention = match &cfg.intervention {
        Some(decl) => Some(resolve_intervention(&system, decl)?),
        None => default_spec,
    };
    let mut test = cfg.test.clone().unwrap_or_default();
    if over.alpha.is_some() {
        test.alpha = over.alpha;
    }
    if let Some(a) = test.alpha {
        if !(a > 0.0 && a < 1.0) {
            return Err(Failure::Config(format!("alpha must lie in (0, 1), got {a}")));
        }
    }
    let n_paths = over.paths.or(cfg.n_paths);
    if n_paths == Some(0) {
        return Err(Failure::Config("n_paths must be positive".into()));
    }
    Ok(Resolved {
        system,
        ou,
        system_b,
        grid,
        n_paths,
        seed: over.seed.or(cfg.seed).unwrap_or(0),
        intervention,
        test,
        generator: cfg.generator.clone().unwrap_or_default(),
        convergence: cfg.convergence.clone().unwrap_or_default(),
    })
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix<f64>, Failure> {
    Matrix::from_rows(rows).map_err(|e| Failure::Config(format!("{what}: {e}")))
}

fn labels_or_default(labels: &Option<Vec<String>>, p: usize) -> Vec<String> {
    labels.clone().unwrap_or_else(|| default_labels(p))
}

type Built = (SdeSystem<f64>, Option<OuModel<f64>>, Option<InterventionSpec<f64>>);

fn build_system(spec: &SystemSpec, driver: Option<&DriverSpec>, initial: Option<&InitialSpec>) -> Result<Built, Failure> {
    let fixed_driver = |kind: &str| -> Result<(), Failure> {
        match driver {
            Some(_) => Err(Failure::Config(format!("`{kind}` systems fix their own driver; remove `driver`"))),
            None => Ok(()),
        }
    };
    let built: Built = match spec {
        SystemSpec::Builtin { name, params } => {
            fixed_driver("builtin")?;
            let mut b = load_builtin::<f64>(name).map_err(config_err)?;
            if let Some(params) = params {
                if name != "chem" && name != "chem-network" {
                    return Err(Failure::Config(format!("builtin `{name}` takes no params")));
                }
                b.system = if name == "chem" {
                    causal_sde::builtin::chem(params.clone())
                } else {
                    causal_sde::builtin::chem_network(params.clone())
                };
            }
            let ou = (name == "ou").then(causal_sde::builtin::ou_model::<f64>);
            (b.system, ou, Some(b.intervention))
        }
        SystemSpec::Ou {
            level,
            reversion,
            sigma,
            labels,
        } => {
            fixed_driver("ou")?;
            let b = matrix(reversion, "reversion")?;
            let s = matrix(sigma, "sigma")?;
            let p = b.rows();
            let level = level.clone().unwrap_or_else(|| vec![0.0; p]);
            let init = match initial {
                Some(i) => initial_law(i)?,
                None => InitialLaw::Fixed(level.clone()),
            };
            let model = OuModel::new(level, b, s, init).map_err(config_err)?;
            let mut system = ou_to_system(&model);
            system.labels = labels_or_default(labels, p);
            let system = SdeSystem::new(system.coeff, system.driver, system.initial, system.labels).map_err(config_err)?;
            (system, Some(model), None)
        }
        SystemSpec::Chem {
            stoichiometry,
            rates,
            constants,
            labels,
        } => {
            fixed_driver("chem")?;
            let s = matrix(stoichiometry, "stoichiometry")?;
            let p = s.rows();
            let rates = rates
                .iter()
                .map(|r| parse_expression_with(r, constants).map_err(|e| Failure::Config(format!("rate `{r}`: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let x0 = match initial {
                Some(InitialSpec::Fixed(v)) => v.clone(),
                Some(_) => return Err(Failure::Config("chem systems need a fixed initial state".into())),
                None => vec![1.0; p],
            };
            let system = build_chem_system(s, rates, x0, Some(labels_or_default(labels, p))).map_err(config_err)?;
            (system, None, None)
        }
        SystemSpec::Expression { coefficients, labels } => {
            let entries = coefficients
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|src| parse_expression(src).map_err(|e| Failure::Config(format!("coefficient `{src}`: {e}"))))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
            let field = CoefficientField::from_expressions(entries).map_err(config_err)?;
            let p = field.p();
            let driver = match driver {
                Some(d) => triplet(d)?,
                None => return Err(Failure::Config("`expression` systems need a `driver`".into())),
            };
            let init = match initial {
                Some(i) => initial_law(i)?,
                None => InitialLaw::Fixed(vec![0.0; p]),
            };
            let system = SdeSystem::new(field, driver, init, labels_or_default(labels, p)).map_err(config_err)?;
            (system, None, None)
        }
    };
    let (mut system, mut ou, default_spec) = built;
    if let (Some(i), SystemSpec::Builtin { .. }) = (initial, spec) {
        let law = initial_law(i)?;
        system = system.with_initial(law.clone()).map_err(config_err)?;
        if let Some(m) = ou.take() {
            ou = Some(OuModel::new(m.level, m.reversion, m.sigma, law).map_err(config_err)?);
        }
    }
    Ok((system, ou, default_spec))
}

fn triplet(d: &DriverSpec) -> Result<LevyTriplet<f64>, Failure> {
    match d {
        DriverSpec::Triplet {
            alpha,
            cov,
            jumps,
            trunc_radius,
        } => {
            let jumps = jumps.iter().map(|j| JumpAtom::new(j.rate, j.location.clone())).collect();
            LevyTriplet::new(alpha.clone(), matrix(cov, "driver covariance")?, jumps, *trunc_radius).map_err(config_err)
        }
        DriverSpec::Brownian { dim } => Ok(LevyTriplet::brownian(*dim)),
        DriverSpec::TimeAndBrownian { dim } => Ok(LevyTriplet::time_and_brownian(*dim)),
    }
}

fn initial_law(i: &InitialSpec) -> Result<InitialLaw<f64>, Failure> {
    match i {
        InitialSpec::Fixed(v) => Ok(InitialLaw::Fixed(v.clone())),
        InitialSpec::Gaussian { mean, cov } => {
            InitialLaw::gaussian(mean.clone(), matrix(cov, "initial covariance")?).map_err(config_err)
        }
    }
}

fn resolve_intervention(system: &SdeSystem<f64>, decl: &InterventionDecl) -> Result<InterventionSpec<f64>, Failure> {
    let m = match system.label_index(&decl.target) {
        Some(m) => m,
        None => {
            let integrator = decl
                .target
                .strip_prefix('Z')
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k >= 1 && k <= system.d());
            return match integrator {
                Some(k) => Err(config_err(causal_sde::Error::IntegratorIntervention(k - 1))),
                None => Err(Failure::Config(format!(
                    "intervention target `{}` is not one of {:?}",
                    decl.target, system.labels
                ))),
            };
        }
    };
    match &decl.value {
        ZetaDecl::Constant(v) => Ok(InterventionSpec::constant(m, *v)),
        ZetaDecl::Expression(src) => {
            let e = parse_expression(src).map_err(|e| Failure::Config(format!("intervention value `{src}`: {e}")))?;
            if e.arity() > system.p() {
                return Err(Failure::Config(format!(
                    "intervention value `{src}` references a coordinate beyond x{}",
                    system.p()
                )));
            }
            InterventionSpec::expression(m, &e).map_err(config_err)
        }
    }
}
