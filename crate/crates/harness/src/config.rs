//! Experiment files: flat `key = value` lines with `#` comments.
//!
//! Keys before the first section describe the experiment. `[problem]`,
//! `[method]` and `[scenario]` hold the rest. `id`, `dim`, `name` and `rho`
//! accept comma-separated lists; the experiment is the product of those
//! lists.
//!
//! ```text
//! experiment_id = table1
//! replications = 100
//! paper_replications = 1000
//! seed = 7
//!
//! [problem]
//! id = s1, s2, s3
//!
//! [method]
//! name = cepmc, lr_pmc, gr_pmc
//! N = 25
//! K = 100
//! T = 20
//! rho = 0.1
//! ```

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;

use cepmc_core::cepmc::FinalBatch;
use cepmc_core::problems::{
    make_conjunction, make_s1, make_s2, make_s3, make_s4, ConjunctionScenario, OrbitalState,
    ParabolicVariant,
};
use cepmc_core::{EstimatorKind, RareEventProblem};
use nalgebra::{DVector, Vector3};

#[derive(Debug, thiserror::Error)]
#[error("{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            message: message.into(),
        }
    }

    fn new(message: impl Into<String>) -> Self {
        Self {
            line: None,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Cepmc,
    Ce,
    LrPmc,
    GrPmc,
    PlainMc,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Cepmc,
        Method::Ce,
        Method::LrPmc,
        Method::GrPmc,
        Method::PlainMc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cepmc => "cepmc",
            Method::Ce => "ce",
            Method::LrPmc => "lr_pmc",
            Method::GrPmc => "gr_pmc",
            Method::PlainMc => "plain_mc",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Method::Cepmc => "cross-entropy population Monte Carlo, N proposals, T trials",
            Method::Ce => "multilevel cross-entropy, one proposal started at the base density, K per iteration",
            Method::LrPmc => "local-resampling PMC, means only",
            Method::GrPmc => "global-resampling PMC, means only",
            Method::PlainMc => "plain Monte Carlo with N*K samples from the base density",
        }
    }

    /// Whether `rho` changes the method's output.
    pub fn uses_rho(self) -> bool {
        matches!(self, Method::Cepmc | Method::Ce)
    }

    fn parse(s: &str) -> Option<Self> {
        Method::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    S1(ParabolicVariant),
    S2(ParabolicVariant),
    S3,
    S4 { beta: f64, dim: usize },
    Conjunction,
}

pub const PROBLEM_IDS: [(&str, &str); 7] = [
    (
        "s1",
        "parabolic limit state 5 - x2 - 0.5 (x1 - 0.1)^2, D = 2",
    ),
    (
        "s1_linear",
        "linear limit state 5 - x2 - 0.5 (x1 - 0.1), D = 2",
    ),
    ("s2", "parabolic limit state 5 - x2 - 0.1 x1^2, D = 2"),
    ("s2_linear", "linear limit state 5 - x2 - 0.1 x1, D = 2"),
    ("s3", "four-branch series system, D = 2"),
    ("s4", "sum(x)/sqrt(D) >= beta, any D (keys dim, beta)"),
    (
        "conjunction",
        "rogue object within miss_threshold of two assets, D = 6 (section [scenario])",
    ),
];

impl ProblemSpec {
    pub fn id(&self) -> &'static str {
        match self {
            ProblemSpec::S1(ParabolicVariant::Squared) => "s1",
            ProblemSpec::S1(ParabolicVariant::Linear) => "s1_linear",
            ProblemSpec::S2(ParabolicVariant::Squared) => "s2",
            ProblemSpec::S2(ParabolicVariant::Linear) => "s2_linear",
            ProblemSpec::S3 => "s3",
            ProblemSpec::S4 { .. } => "s4",
            ProblemSpec::Conjunction => "conjunction",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ProblemSpec::S4 { dim, .. } => *dim,
            ProblemSpec::Conjunction => 6,
            _ => 2,
        }
    }

    pub fn build(&self, scenario: &ConjunctionScenario) -> cepmc_core::Result<RareEventProblem> {
        match *self {
            ProblemSpec::S1(v) => Ok(make_s1(v)),
            ProblemSpec::S2(v) => Ok(make_s2(v)),
            ProblemSpec::S3 => Ok(make_s3()),
            ProblemSpec::S4 { beta, dim } => make_s4(beta, dim),
            ProblemSpec::Conjunction => make_conjunction(scenario),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitScheme {
    /// Means drawn from the base density; covariance `σ²` times the base
    /// covariance.
    StandardNormal,
    /// Centered Latin hypercube on `[-1, 1]^D`, scaled per coordinate by the
    /// base standard deviation; covariance as above.
    LatinHypercube,
    /// Listed means, one per proposal; covariance as above.
    Explicit(Vec<DVector<f64>>),
}

impl InitScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            InitScheme::StandardNormal => "standard_normal",
            InitScheme::LatinHypercube => "latin_hypercube_pm",
            InitScheme::Explicit(_) => "explicit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub experiment_id: String,
    pub replications: usize,
    /// Replication count used by `--full`.
    pub paper_replications: Option<usize>,
    pub seed: u64,
    pub output: PathBuf,
    /// `false` writes 0 in the runtime column so output is byte-identical.
    pub record_timing: bool,
    pub problems: Vec<ProblemSpec>,
    pub methods: Vec<Method>,
    pub rhos: Vec<f64>,
    pub proposals: usize,
    pub samples_per_proposal: usize,
    pub trials: usize,
    pub cov_schedule_start: Option<usize>,
    pub max_iterations: usize,
    pub estimator: EstimatorKind,
    pub final_batch: FinalBatch,
    pub init: InitScheme,
    pub init_sigma: f64,
    pub scenario: ConjunctionScenario,
    /// The text the spec was parsed from.
    pub source: String,
}

/// One `(problem, method, rho)` combination.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub problem: ProblemSpec,
    pub method: Method,
    pub rho: f64,
}

impl ExperimentSpec {
    /// Problems outermost, then methods, then `rho`. Methods that ignore
    /// `rho` appear once, under the first listed value.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for problem in &self.problems {
            for &method in &self.methods {
                let rhos = if method.uses_rho() {
                    &self.rhos[..]
                } else {
                    &self.rhos[..1]
                };
                for &rho in rhos {
                    cells.push(Cell {
                        problem: problem.clone(),
                        method,
                        rho,
                    });
                }
            }
        }
        cells
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum Section {
    Experiment,
    Problem,
    Method,
    Scenario,
}

const KEYS: [(Section, &[&str]); 4] = [
    (
        Section::Experiment,
        &[
            "experiment_id",
            "replications",
            "paper_replications",
            "seed",
            "output",
            "record_timing",
        ],
    ),
    (Section::Problem, &["id", "dim", "beta"]),
    (
        Section::Method,
        &[
            "name",
            "N",
            "K",
            "T",
            "rho",
            "cov_schedule_start",
            "max_iterations",
            "estimator",
            "final_batch",
            "init",
            "init_sigma",
            "init_means",
        ],
    ),
    (
        Section::Scenario,
        &[
            "rogue_mean",
            "rogue_pos_sigma",
            "rogue_vel_sigma",
            "assets",
            "horizon",
            "miss_threshold",
            "mu_grav",
        ],
    ),
];

struct Entries {
    map: HashMap<(Section, &'static str), (usize, String)>,
}

impl Entries {
    fn raw(&self, section: Section, key: &str) -> Option<(usize, &str)> {
        self.map
            .iter()
            .find(|((s, k), _)| *s == section && *k == key)
            .map(|(_, (line, v))| (*line, v.as_str()))
    }

    fn get<T: std::str::FromStr>(
        &self,
        section: Section,
        key: &str,
    ) -> Result<Option<T>, ConfigError> {
        match self.raw(section, key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| ConfigError::at(line, format!("cannot parse `{v}` for {key}"))),
        }
    }

    fn list<T: std::str::FromStr>(
        &self,
        section: Section,
        key: &str,
    ) -> Result<Option<Vec<T>>, ConfigError> {
        match self.raw(section, key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|item| {
                    let item = item.trim();
                    item.parse().map_err(|_| {
                        ConfigError::at(line, format!("cannot parse `{item}` in {key}"))
                    })
                })
                .collect::<Result<Vec<T>, _>>()
                .map(Some),
        }
    }
}

fn tokenize(text: &str) -> Result<Entries, ConfigError> {
    let mut section = Section::Experiment;
    let mut map = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = match name.trim() {
                "problem" => Section::Problem,
                "method" => Section::Method,
                "scenario" => Section::Scenario,
                other => {
                    return Err(ConfigError::at(
                        line_no,
                        format!("unknown section [{other}]"),
                    ))
                }
            };
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            ConfigError::at(line_no, format!("expected `key = value`, got `{line}`"))
        })?;
        let key = key.trim();
        let allowed = KEYS
            .iter()
            .find(|(s, _)| *s == section)
            .map(|(_, k)| *k)
            .unwrap_or(&[]);
        let key: &'static str = allowed.iter().find(|k| **k == key).ok_or_else(|| {
            ConfigError::at(
                line_no,
                format!("unknown key `{key}` in {section:?} section"),
            )
        })?;
        if map
            .insert((section, key), (line_no, value.trim().to_string()))
            .is_some()
        {
            return Err(ConfigError::at(line_no, format!("duplicate key `{key}`")));
        }
    }
    Ok(Entries { map })
}

fn parse_problem_id(id: &str, dims: &[usize], beta: f64) -> Result<Vec<ProblemSpec>, String> {
    Ok(match id {
        "s1" => vec![ProblemSpec::S1(ParabolicVariant::Squared)],
        "s1_linear" => vec![ProblemSpec::S1(ParabolicVariant::Linear)],
        "s2" => vec![ProblemSpec::S2(ParabolicVariant::Squared)],
        "s2_linear" => vec![ProblemSpec::S2(ParabolicVariant::Linear)],
        "s3" => vec![ProblemSpec::S3],
        "s4" => dims
            .iter()
            .map(|&dim| ProblemSpec::S4 { beta, dim })
            .collect(),
        "conjunction" => vec![ProblemSpec::Conjunction],
        other => return Err(format!("unknown problem `{other}`")),
    })
}

fn numbers(line: usize, text: &str) -> Result<Vec<f64>, ConfigError> {
    text.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| ConfigError::at(line, format!("not a number: `{t}`")))
        })
        .collect()
}

/// `x y z vx vy vz [epoch]`
fn orbital_state(line: usize, text: &str) -> Result<OrbitalState, ConfigError> {
    let v = numbers(line, text)?;
    if v.len() != 6 && v.len() != 7 {
        return Err(ConfigError::at(
            line,
            "an orbital state is `x y z vx vy vz [epoch]`",
        ));
    }
    Ok(OrbitalState::new(
        Vector3::new(v[0], v[1], v[2]),
        Vector3::new(v[3], v[4], v[5]),
        v.get(6).copied().unwrap_or(0.0),
    ))
}

fn scenario(entries: &Entries) -> Result<ConjunctionScenario, ConfigError> {
    let mut s = ConjunctionScenario::default();
    if let Some((line, v)) = entries.raw(Section::Scenario, "rogue_mean") {
        s.rogue_mean = orbital_state(line, v)?;
    }
    if let Some((line, v)) = entries.raw(Section::Scenario, "assets") {
        let states = v
            .split(';')
            .map(|part| orbital_state(line, part))
            .collect::<Result<Vec<_>, _>>()?;
        s.assets = states.try_into().map_err(|_| {
            ConfigError::at(line, "assets takes exactly two states separated by `;`")
        })?;
    }
    let scalars: [(&str, &mut f64); 5] = [
        ("rogue_pos_sigma", &mut s.rogue_pos_sigma),
        ("rogue_vel_sigma", &mut s.rogue_vel_sigma),
        ("horizon", &mut s.horizon),
        ("miss_threshold", &mut s.miss_threshold),
        ("mu_grav", &mut s.mu_grav),
    ];
    for (key, slot) in scalars {
        if let Some(v) = entries.get(Section::Scenario, key)? {
            *slot = v;
        }
    }
    s.validate()
        .map_err(|e| ConfigError::new(format!("invalid scenario: {e}")))?;
    Ok(s)
}

fn required<T>(value: Option<T>, key: &str) -> Result<T, ConfigError> {
    value.ok_or_else(|| ConfigError::new(format!("missing required key `{key}`")))
}

pub fn parse_config(text: &str) -> Result<ExperimentSpec, ConfigError> {
    let e = tokenize(text)?;
    let experiment_id: String = required(
        e.get(Section::Experiment, "experiment_id")?,
        "experiment_id",
    )?;
    if experiment_id.is_empty() || experiment_id.contains(['/', '\\', ',']) {
        return Err(ConfigError::new(
            "experiment_id must be non-empty without `/`, `\\` or `,`",
        ));
    }
    let replications = e.get(Section::Experiment, "replications")?.unwrap_or(1);
    if replications == 0 {
        return Err(ConfigError::new("replications must be at least 1"));
    }
    let output = e
        .get::<String>(Section::Experiment, "output")?
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out").join(&experiment_id));

    let dims: Vec<usize> = e.list(Section::Problem, "dim")?.unwrap_or_else(|| vec![2]);
    let beta = e.get(Section::Problem, "beta")?.unwrap_or(5.0);
    let ids: Vec<String> = required(e.list(Section::Problem, "id")?, "id")?;
    let mut problems = Vec::new();
    for id in &ids {
        let line = e.raw(Section::Problem, "id").map(|(l, _)| l).unwrap_or(0);
        problems.extend(parse_problem_id(id, &dims, beta).map_err(|m| ConfigError::at(line, m))?);
    }
    if dims.contains(&0) {
        return Err(ConfigError::new("dim must be at least 1"));
    }

    let names: Vec<String> = required(e.list(Section::Method, "name")?, "name")?;
    let methods = names
        .iter()
        .map(|n| Method::parse(n).ok_or_else(|| ConfigError::new(format!("unknown method `{n}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    let rhos: Vec<f64> = e
        .list(Section::Method, "rho")?
        .unwrap_or_else(|| vec![cepmc_core::cross_entropy::DEFAULT_RHO]);
    if let Some(bad) = rhos.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
        return Err(ConfigError::new(format!(
            "rho must lie in (0, 1), got {bad}"
        )));
    }
    let proposals = required(e.get(Section::Method, "N")?, "N")?;
    let samples_per_proposal = required(e.get(Section::Method, "K")?, "K")?;
    let trials = required(e.get(Section::Method, "T")?, "T")?;
    if proposals == 0 || samples_per_proposal == 0 || trials == 0 {
        return Err(ConfigError::new("N, K and T must be at least 1"));
    }
    let cov_schedule_start = e.get(Section::Method, "cov_schedule_start")?;
    if let Some(c) = cov_schedule_start {
        if c == 0 || c > trials + 1 {
            return Err(ConfigError::new("cov_schedule_start must lie in [1, T+1]"));
        }
    }
    let estimator = match e.get::<String>(Section::Method, "estimator")?.as_deref() {
        None | Some("final_trial") => EstimatorKind::FinalTrial,
        Some("all_trials") => EstimatorKind::AllTrials,
        Some(other) => return Err(ConfigError::new(format!("unknown estimator `{other}`"))),
    };
    let final_batch = match e.get::<String>(Section::Method, "final_batch")?.as_deref() {
        None | Some("as_drawn") => FinalBatch::AsDrawn,
        Some("fresh") => FinalBatch::Fresh,
        Some(other) => return Err(ConfigError::new(format!("unknown final_batch `{other}`"))),
    };
    let init_sigma = e.get(Section::Method, "init_sigma")?.unwrap_or(1.0);
    if !(init_sigma > 0.0 && f64::is_finite(init_sigma)) {
        return Err(ConfigError::new("init_sigma must be positive"));
    }
    let init = match e.get::<String>(Section::Method, "init")?.as_deref() {
        None | Some("standard_normal") => InitScheme::StandardNormal,
        Some("latin_hypercube_pm") => InitScheme::LatinHypercube,
        Some("explicit") => {
            let (line, text) = e
                .raw(Section::Method, "init_means")
                .ok_or_else(|| ConfigError::new("init = explicit needs init_means"))?;
            let means = text
                .split(';')
                .map(|m| numbers(line, m).map(DVector::from_vec))
                .collect::<Result<Vec<_>, _>>()?;
            if means.len() != proposals {
                return Err(ConfigError::at(
                    line,
                    format!("init_means lists {} means, N = {proposals}", means.len()),
                ));
            }
            InitScheme::Explicit(means)
        }
        Some(other) => return Err(ConfigError::new(format!("unknown init `{other}`"))),
    };
    if let InitScheme::Explicit(means) = &init {
        if let Some(p) = problems
            .iter()
            .find(|p| means.iter().any(|m| m.len() != p.dim()))
        {
            return Err(ConfigError::new(format!(
                "init_means do not match dimension {} of {}",
                p.dim(),
                p.id()
            )));
        }
    }

    Ok(ExperimentSpec {
        experiment_id,
        replications,
        paper_replications: e.get(Section::Experiment, "paper_replications")?,
        seed: e.get(Section::Experiment, "seed")?.unwrap_or(0),
        output,
        record_timing: e.get(Section::Experiment, "record_timing")?.unwrap_or(true),
        problems,
        methods,
        rhos,
        proposals,
        samples_per_proposal,
        trials,
        cov_schedule_start,
        max_iterations: e
            .get(Section::Method, "max_iterations")?
            .unwrap_or(cepmc_core::cross_entropy::DEFAULT_MAX_ITERATIONS),
        estimator,
        final_batch,
        init,
        init_sigma,
        scenario: scenario(&e)?,
        source: text.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str =
        "experiment_id = t\n[problem]\nid = s3\n[method]\nname = cepmc\nN = 2\nK = 10\nT = 3\n";

    #[test]
    fn minimal_defaults() {
        let s = parse_config(MINIMAL).unwrap();
        assert_eq!(s.replications, 1);
        assert_eq!(s.rhos, vec![0.1]);
        assert_eq!(s.init, InitScheme::StandardNormal);
        assert_eq!(s.output, PathBuf::from("out/t"));
        assert_eq!(s.scenario, ConjunctionScenario::default());
        assert!(s.record_timing);
        assert_eq!(s.cells().len(), 1);
    }

    #[test]
    fn lists_expand_to_cells() {
        let text =
            "experiment_id = sweep\n# comment\n[problem]\nid = s4, s3  # trailing\ndim = 2, 10\n\
                    [method]\nname = cepmc, gr_pmc\nrho = 0.05, 0.1, 0.2\nN = 4\nK = 50\nT = 4\n";
        let s = parse_config(text).unwrap();
        assert_eq!(s.problems.len(), 3);
        // cepmc sweeps rho, gr_pmc runs once
        assert_eq!(s.cells().len(), 3 * (3 + 1));
        assert_eq!(s.cells()[0].problem, ProblemSpec::S4 { beta: 5.0, dim: 2 });
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_config("experiment_id = t\nbogus = 1\n").unwrap_err();
        assert_eq!(err.line, Some(2));
        let err = parse_config("experiment_id = t\n[problem]\nid = s3\nid = s1\n").unwrap_err();
        assert_eq!(err.line, Some(4));
        assert!(parse_config("experiment_id = t\n[nope]\n").is_err());
        assert!(parse_config("experiment_id = t\njust text\n").is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            MINIMAL.replace("s3", "s9"),
            MINIMAL.replace("cepmc", "mcmc"),
            MINIMAL.replace("N = 2", "N = 0"),
            MINIMAL.replace("T = 3", "T = 3\nrho = 1.5"),
            MINIMAL.replace("T = 3", "T = 3\ncov_schedule_start = 9"),
            MINIMAL.replace("experiment_id = t", "experiment_id = a/b"),
            MINIMAL.replace("T = 3", "T = 3\ninit = explicit\ninit_means = 0 0"),
            MINIMAL.replace("T = 3", "T = 3\ninit = explicit\ninit_means = 0 0 0; 1 1 1"),
            format!("{MINIMAL}[scenario]\nrogue_pos_sigma = -1\n"),
        ];
        for text in bad {
            assert!(parse_config(&text).is_err(), "accepted:\n{text}");
        }
    }

    #[test]
    fn explicit_init_and_scenario() {
        let text = format!(
            "{}init = explicit\ninit_means = 0 1; -1 0.5\n[scenario]\nmiss_threshold = 60\nhorizon = 100\n",
            MINIMAL
        );
        let s = parse_config(&text).unwrap();
        match &s.init {
            InitScheme::Explicit(m) => assert_eq!(m[1], DVector::from_vec(vec![-1.0, 0.5])),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.scenario.miss_threshold, 60.0);
        assert_eq!(s.scenario.horizon, 100.0);
    }

    #[test]
    fn scenario_states_round_trip() {
        let d = ConjunctionScenario::default();
        let fmt_state = |s: &OrbitalState| {
            format!(
                "{} {} {} {} {} {} {}",
                s.position.x,
                s.position.y,
                s.position.z,
                s.velocity.x,
                s.velocity.y,
                s.velocity.z,
                s.epoch
            )
        };
        let text = format!(
            "{MINIMAL}[scenario]\nrogue_mean = {}\nassets = {}; {}\n",
            fmt_state(&d.rogue_mean),
            fmt_state(&d.assets[0]),
            fmt_state(&d.assets[1])
        );
        assert_eq!(parse_config(&text).unwrap().scenario, d);
    }
}
