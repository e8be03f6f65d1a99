//! Run configuration files.
//!
//! A TOML file with four sections. `[g]` and `[coefficients]` are required;
//! every key outside the tables below is rejected.
//!
//! | section          | key               | default                  |
//! |------------------|-------------------|--------------------------|
//! | `[g]`            | `sigma_lo`        | required                 |
//! | `[g]`            | `sigma_hi`        | required                 |
//! | `[coefficients]` | `b`, `h`, `f`, `g`| `"0"`                    |
//! | `[coefficients]` | `sigma`           | `"1"`                    |
//! | `[coefficients]` | `phi`             | `"0"`                    |
//! | `[coefficients]` | `L`, `M`          | `1`, `10`                |
//! | `[coefficients]` | `lambda`, `beta`  | `0.25`, `4`              |
//! | `[coefficients]` | `T`               | `1`                      |
//! | `[grid]`         | `x_min`, `x_max`  | `-6`, `6`                |
//! | `[grid]`         | `nx`              | `241`                    |
//! | `[grid]`         | `nt`              | smallest stable count    |
//! | `[run]`          | `seed`            | `0`                      |
//! | `[run]`          | `n_paths`         | `10000`                  |
//! | `[run]`          | `n_steps`         | `100`                    |
//! | `[run]`          | `delta0`          | `0.1`                    |
//! | `[run]`          | `alpha`           | `0.5`                    |
//! | `[run]`          | `tol`             | `1e-10`                  |
//! | `[run]`          | `max_iter`        | `60`                     |
//! | `[run]`          | `window`          | `4`                      |
//! | `[run]`          | `out`             | none                     |

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use thiserror::Error;

use crate::coeffs::{BundleError, CoefficientBundle, Constants};
use crate::dsl::parse;
use crate::g::GParams;
use crate::pde::{cfl_steps, Grid1D, PdeError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{file}:{line}:{column}: {message}")]
    Syntax {
        file: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{file}: missing section [{section}]")]
    MissingSection { file: String, section: &'static str },
    #[error("{file}:{line}: unknown section [{section}]{}", suggest(.suggestion))]
    UnknownSection {
        file: String,
        line: usize,
        section: String,
        suggestion: Option<String>,
    },
    #[error("{file}:{line}: unknown key `{key}` in [{section}]{}", suggest(.suggestion))]
    UnknownKey {
        file: String,
        line: usize,
        section: String,
        key: String,
        suggestion: Option<String>,
    },
    #[error("{file}:{line}: invalid [{section}]: {message}")]
    Invalid {
        file: String,
        line: usize,
        section: &'static str,
        message: String,
    },
    #[error("{file}:{line}: expression `{key}`: {message}")]
    Expression {
        file: String,
        line: usize,
        key: String,
        message: String,
    },
}

fn suggest(s: &Option<String>) -> String {
    match s {
        Some(s) => format!(" (did you mean `{s}`?)"),
        None => String::new(),
    }
}

const SECTIONS: [&str; 4] = ["g", "coefficients", "grid", "run"];
const G_KEYS: &[&str] = &["sigma_lo", "sigma_hi"];
const COEFF_EXPRS: [&str; 6] = ["b", "h", "sigma", "f", "g", "phi"];
const COEFF_CONSTS: [&str; 5] = ["L", "M", "lambda", "beta", "T"];
const GRID_KEYS: &[&str] = &["x_min", "x_max", "nx", "nt"];
const RUN_KEYS: &[&str] = &[
    "seed", "n_paths", "n_steps", "delta0", "alpha", "tol", "max_iter", "window", "out",
];

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "GridSection::default_x_min")]
    pub x_min: f64,
    #[serde(default = "GridSection::default_x_max")]
    pub x_max: f64,
    #[serde(default = "GridSection::default_nx")]
    pub nx: usize,
    /// Time steps over `[0, T]`; chosen from the stability bound when absent.
    #[serde(default)]
    pub nt: Option<usize>,
}

impl GridSection {
    fn default_x_min() -> f64 {
        -6.0
    }
    fn default_x_max() -> f64 {
        6.0
    }
    fn default_nx() -> usize {
        241
    }
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            x_min: Self::default_x_min(),
            x_max: Self::default_x_max(),
            nx: Self::default_nx(),
            nt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "RunSection::default_paths")]
    pub n_paths: usize,
    #[serde(default = "RunSection::default_steps")]
    pub n_steps: usize,
    #[serde(default = "RunSection::default_delta0")]
    pub delta0: f64,
    #[serde(default = "RunSection::default_alpha")]
    pub alpha: f64,
    #[serde(default = "RunSection::default_tol")]
    pub tol: f64,
    #[serde(default = "RunSection::default_max_iter")]
    pub max_iter: usize,
    /// Half-width of the evaluation window for field comparisons.
    #[serde(default = "RunSection::default_window")]
    pub window: f64,
    #[serde(default)]
    pub out: Option<String>,
}

impl RunSection {
    fn default_paths() -> usize {
        10_000
    }
    fn default_steps() -> usize {
        100
    }
    fn default_delta0() -> f64 {
        0.1
    }
    fn default_alpha() -> f64 {
        0.5
    }
    fn default_tol() -> f64 {
        1e-10
    }
    fn default_max_iter() -> usize {
        60
    }
    fn default_window() -> f64 {
        4.0
    }
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            n_paths: Self::default_paths(),
            n_steps: Self::default_steps(),
            delta0: Self::default_delta0(),
            alpha: Self::default_alpha(),
            tol: Self::default_tol(),
            max_iter: Self::default_max_iter(),
            window: Self::default_window(),
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub g: GParams,
    pub coefficients: CoefficientBundle,
    pub grid: GridSection,
    pub run: RunSection,
}

impl RunConfig {
    /// Solve grid over `[0, T]`, filling `nt` from the stability bound if unset.
    pub fn solve_grid(&self) -> Result<Grid1D, PdeError> {
        let horizon = self.coefficients.horizon();
        let base = Grid1D::new(self.grid.x_min, self.grid.x_max, self.grid.nx, horizon, 1);
        base.validate()?;
        let nt = match self.grid.nt {
            Some(nt) => nt,
            None => cfl_steps(
                &self.coefficients,
                &self.g,
                &base,
                self.coefficients.constants.lipschitz,
                0.9,
            )?,
        };
        Ok(Grid1D { nt, ..base })
    }
}

/// Read and validate a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
    let path = path.as_ref();
    let file = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: file.clone(),
        message: e.to_string(),
    })?;
    parse_config(&text, &file)
}

/// Parse configuration text; `file` names the source in error messages.
pub fn parse_config(text: &str, file: &str) -> Result<RunConfig, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        let (line, column) = e
            .span()
            .map(|s| line_col(text, s.start))
            .unwrap_or((1, 1));
        ConfigError::Syntax {
            file: file.to_string(),
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    let locate = |section: &str, key: Option<&str>| find_line(text, section, key);

    for (name, value) in &table {
        if !SECTIONS.contains(&name.as_str()) || !value.is_table() {
            return Err(ConfigError::UnknownSection {
                file: file.to_string(),
                line: locate(name, None),
                section: name.clone(),
                suggestion: closest(name, &SECTIONS),
            });
        }
    }
    let section = |name: &'static str, keys: &[&str], required: bool| -> Result<toml::Table, ConfigError> {
        let Some(value) = table.get(name) else {
            if required {
                return Err(ConfigError::MissingSection {
                    file: file.to_string(),
                    section: name,
                });
            }
            return Ok(toml::Table::new());
        };
        let t = value.as_table().expect("checked above").clone();
        for key in t.keys() {
            if !keys.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey {
                    file: file.to_string(),
                    line: locate(name, Some(key)),
                    section: name.to_string(),
                    key: key.clone(),
                    suggestion: closest(key, keys),
                });
            }
        }
        Ok(t)
    };
    let invalid = |name: &'static str, message: String| ConfigError::Invalid {
        file: file.to_string(),
        line: locate(name, None),
        section: name,
        message,
    };

    let g_table = section("g", G_KEYS, true)?;
    let coeff_keys: Vec<&str> = COEFF_EXPRS.iter().chain(COEFF_CONSTS.iter()).copied().collect();
    let coeff_table = section("coefficients", &coeff_keys, true)?;
    let grid_table = section("grid", GRID_KEYS, false)?;
    let run_table = section("run", RUN_KEYS, false)?;

    let g: GParams = typed(g_table).map_err(|m| invalid("g", m))?;

    let mut const_table = toml::Table::new();
    let mut sources = [""; 6];
    let defaults = ["0", "0", "1", "0", "0", "0"];
    for (i, key) in COEFF_EXPRS.iter().enumerate() {
        sources[i] = match coeff_table.get(*key) {
            None => defaults[i],
            Some(toml::Value::String(s)) => s.as_str(),
            Some(other) => {
                return Err(ConfigError::Expression {
                    file: file.to_string(),
                    line: locate("coefficients", Some(key)),
                    key: key.to_string(),
                    message: format!("expected a quoted expression, found {}", other.type_str()),
                })
            }
        };
    }
    for key in COEFF_CONSTS {
        if let Some(v) = coeff_table.get(key) {
            const_table.insert(key.to_string(), v.clone());
        }
    }
    let constants: Constants = typed(const_table).map_err(|m| invalid("coefficients", m))?;
    let mut exprs = Vec::with_capacity(6);
    for (key, src) in COEFF_EXPRS.iter().zip(sources) {
        let e = parse(src).map_err(|e| ConfigError::Expression {
            file: file.to_string(),
            line: locate("coefficients", Some(key)),
            key: key.to_string(),
            message: e.to_string(),
        })?;
        exprs.push(e);
    }
    let exprs: [_; 6] = exprs.try_into().expect("six slots");
    let coefficients = CoefficientBundle::new(exprs, constants).map_err(|e| match &e {
        BundleError::Arity { slot, .. } => ConfigError::Expression {
            file: file.to_string(),
            line: locate("coefficients", Some(slot)),
            key: slot.to_string(),
            message: e.to_string(),
        },
        _ => invalid("coefficients", e.to_string()),
    })?;

    let grid: GridSection = typed(grid_table).map_err(|m| invalid("grid", m))?;
    let run: RunSection = typed(run_table).map_err(|m| invalid("run", m))?;
    if run.n_paths == 0 || run.n_steps == 0 || run.max_iter == 0 {
        return Err(invalid("run", "n_paths, n_steps and max_iter must be positive".into()));
    }
    if !(run.delta0 > 0.0 && run.tol >= 0.0 && run.window > 0.0) {
        return Err(invalid("run", "delta0 and window must be positive, tol non-negative".into()));
    }
    let cfg = RunConfig {
        g,
        coefficients,
        grid,
        run,
    };
    Grid1D::new(cfg.grid.x_min, cfg.grid.x_max, cfg.grid.nx, 1.0, cfg.grid.nt.unwrap_or(1))
        .validate()
        .map_err(|e| invalid("grid", e.to_string()))?;
    Ok(cfg)
}

fn typed<T: DeserializeOwned>(table: toml::Table) -> Result<T, String> {
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| e.message().to_string())
}

fn closest(word: &str, candidates: &[&str]) -> Option<String> {
    candidates
        .iter()
        .map(|c| (strsim::damerau_levenshtein(word, c), *c))
        .filter(|(d, c)| *d <= 2.max(c.len() / 3))
        .min_by_key(|(d, _)| *d)
        .map(|(_, c)| c.to_string())
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

/// Line of `key` inside `[section]`, or of the section header when `key` is `None`.
fn find_line(text: &str, section: &str, key: Option<&str>) -> usize {
    let mut current = String::new();
    let mut header_line = 1;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = rest.trim_end_matches(']').trim().to_string();
            if current == section && key.is_none() {
                return i + 1;
            }
            if current == section {
                header_line = i + 1;
            }
            continue;
        }
        if current == section {
            if let Some(k) = key {
                let name = line.split('=').next().unwrap_or("").trim().trim_matches('"');
                if name == k {
                    return i + 1;
                }
            }
        }
    }
    header_line
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::Slot;

    const MINIMAL: &str = "[g]\nsigma_lo = 0.8\nsigma_hi = 1.2\n\n[coefficients]\nphi = \"x^2\"\n";

    #[test]
    fn minimal_file_fills_defaults() {
        let cfg = parse_config(MINIMAL, "min.toml").unwrap();
        assert_eq!(cfg.g, GParams::new(0.8, 1.2).unwrap());
        assert_eq!(cfg.grid, GridSection::default());
        assert_eq!(cfg.run, RunSection::default());
        assert_eq!(cfg.coefficients.constants, Constants::default());
        assert_eq!(cfg.coefficients.expr(Slot::Sigma).to_string(), "1.0");
        let grid = cfg.solve_grid().unwrap();
        assert_eq!(grid.nx, 241);
        assert!(grid.nt > 0);
    }

    #[test]
    fn ordering_violation_names_gparams() {
        let text = "[g]\nsigma_lo = 1.2\nsigma_hi = 0.8\n[coefficients]\n";
        let err = parse_config(text, "bad.toml").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("GParams"), "{msg}");
        assert!(msg.starts_with("bad.toml:1:"), "{msg}");
    }

    #[test]
    fn misspelled_key_gets_suggestion() {
        let text = "[g]\nsgima_lo = 0.8\nsigma_hi = 1.2\n[coefficients]\n";
        let err = parse_config(text, "typo.toml").unwrap_err();
        match &err {
            ConfigError::UnknownKey {
                line, key, suggestion, ..
            } => {
                assert_eq!(*line, 2);
                assert_eq!(key, "sgima_lo");
                assert_eq!(suggestion.as_deref(), Some("sigma_lo"));
            }
            other => panic!("{other:?}"),
        }
        assert!(err.to_string().contains("did you mean `sigma_lo`"));
    }

    #[test]
    fn other_errors_carry_locations() {
        let missing = parse_config("[coefficients]\n", "m.toml").unwrap_err();
        assert!(matches!(missing, ConfigError::MissingSection { section: "g", .. }));
        let expr = parse_config(&format!("{MINIMAL}b = \"tanh(x\"\n"), "e.toml").unwrap_err();
        match expr {
            ConfigError::Expression { line, key, .. } => assert_eq!((line, key.as_str()), (7, "b")),
            other => panic!("{other:?}"),
        }
        let arity = parse_config(&format!("{MINIMAL}sigma = \"z\"\n"), "a.toml").unwrap_err();
        assert!(matches!(arity, ConfigError::Expression { line: 7, .. }), "{arity}");
        let syntax = parse_config("[g\n", "s.toml").unwrap_err();
        assert!(matches!(syntax, ConfigError::Syntax { line: 1, .. }));
        let section = parse_config(&format!("{MINIMAL}[gird]\nnx = 3\n"), "x.toml").unwrap_err();
        assert!(section.to_string().contains("did you mean `grid`"), "{section}");
        let grid = parse_config(&format!("{MINIMAL}[grid]\nnx = 2\n"), "g.toml").unwrap_err();
        assert!(matches!(grid, ConfigError::Invalid { section: "grid", line: 7, .. }));
    }

    #[test]
    fn full_file_round_trip() {
        let text = r#"
[g]
sigma_lo = 1
sigma_hi = 1

[coefficients]
b = "0.1*sin(y)"
phi = "tanh(x)"
L = 2
T = 0.5

[grid]
x_min = -4
x_max = 4
nx = 81
nt = 500

[run]
seed = 7
n_paths = 100
out = "u.csv"
"#;
        let cfg = parse_config(text, "full.toml").unwrap();
        assert!(cfg.g.is_classical());
        assert_eq!(cfg.coefficients.constants.lipschitz, 2.0);
        assert_eq!(cfg.coefficients.horizon(), 0.5);
        let grid = cfg.solve_grid().unwrap();
        assert_eq!((grid.nx, grid.nt, grid.t_end), (81, 500, 0.5));
        assert_eq!(cfg.run.out.as_deref(), Some("u.csv"));
        assert_eq!(cfg.run.seed, 7);
    }
}
