//! Plain-text key = value configuration with a documented schema.
//!
//! Lines are `key = value`; `#` starts a comment; keys are dot-namespaced.
//! Complex numbers are written as `re,im`. See the repository README for
//! the full schema.

use anyhow::{anyhow, bail, Context, Result};
use gdflows_core::grid::Grid;
use gdflows_core::potential::{CoeffSpec, Potential};
use num_complex::Complex;
use std::collections::BTreeMap;
use std::path::Path;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone)]
pub struct Config {
    map: BTreeMap<String, String>,
    /// Canonical text (comment-free, sorted) used for hashing.
    pub canonical: String,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`, got {raw:?}", idx + 1))?;
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        let canonical = map
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect::<String>();
        let cfg = Config { map, canonical };
        let version = cfg.u64("schema_version")?;
        if version != SCHEMA_VERSION {
            bail!("unsupported schema_version {version}; this tool reads version {SCHEMA_VERSION}");
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Config::parse(&text)
    }

    pub fn hash(&self) -> u64 {
        gdflows_core::report::fnv1a(self.canonical.as_bytes())
    }

    fn raw(&self, key: &str) -> Result<&str> {
        self.map
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| anyhow!("missing config key {key:?}"))
    }

    pub fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.raw(key)?
            .parse()
            .with_context(|| format!("key {key:?} must be a number"))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        if self.has(key) {
            self.f64(key)
        } else {
            Ok(default)
        }
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.raw(key)?
            .parse()
            .with_context(|| format!("key {key:?} must be an integer"))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        if self.has(key) {
            Ok(self.u64(key)? as usize)
        } else {
            Ok(default)
        }
    }

    pub fn complex(&self, key: &str) -> Result<Complex<f64>> {
        let raw = self.raw(key)?;
        let (re, im) = raw
            .split_once(',')
            .ok_or_else(|| anyhow!("key {key:?} must be a complex `re,im` pair"))?;
        Ok(Complex::new(
            re.trim()
                .parse()
                .with_context(|| format!("key {key:?}: bad real part"))?,
            im.trim()
                .parse()
                .with_context(|| format!("key {key:?}: bad imaginary part"))?,
        ))
    }

    pub fn string_or(&self, key: &str, default: &str) -> String {
        self.map
            .get(key)
            .cloned()
            .unwrap_or_else(|| default.to_string())
    }

    /// Validate tolerances are positive and referenced files exist.
    pub fn validate(&self, base: &Path) -> Result<()> {
        for (k, v) in &self.map {
            if k.starts_with("tol.") || k == "decay_tol" {
                let x: f64 = v
                    .parse()
                    .with_context(|| format!("key {k:?} must be a number"))?;
                if !(x > 0.0) {
                    bail!("tolerance {k} must be positive, got {v}");
                }
            }
            if k == "potential.file" {
                let p = base.join(v);
                if !p.exists() {
                    bail!("potential file {} does not exist", p.display());
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> Result<usize> {
        let n = self.u64("n")? as usize;
        if n < 2 {
            bail!("n must be at least 2");
        }
        Ok(n)
    }

    pub fn grid(&self) -> Result<Grid<f64>> {
        Ok(Grid::new(
            self.f64_or("grid.x_max", 20.0)?,
            self.f64_or("grid.h", 0.01)?,
        ))
    }

    pub fn decay_tol(&self) -> Result<f64> {
        self.f64_or("decay_tol", 1e-12)
    }

    pub fn rays(&self) -> Result<gdflows_core::wave::RayGridSpec<f64>> {
        Ok(gdflows_core::wave::RayGridSpec {
            r_min: self.f64_or("rays.r_min", 0.3)?,
            r_max: self.f64_or("rays.r_max", 8.0)?,
            count: self.usize_or("rays.count", 64)?,
        })
    }

    pub fn potential(&self, base: &Path) -> Result<Potential<f64>> {
        if self.has("potential.file") {
            let path = base.join(self.raw("potential.file")?);
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading potential {}", path.display()))?;
            return Ok(Potential::from_csv(&text, self.decay_tol()?)?);
        }
        let n = self.n()?;
        let grid = self.grid()?;
        let mut coeffs = Vec::with_capacity(n - 1);
        for j in 0..n - 1 {
            let prefix = format!("coeff.{j}");
            let kind = self.string_or(&format!("{prefix}.kind"), "zero");
            let spec = match kind.as_str() {
                "zero" => CoeffSpec::Zero,
                "gaussian" => CoeffSpec::Gaussian {
                    amp: self.complex(&format!("{prefix}.amp"))?,
                    sigma: self.f64_or(&format!("{prefix}.sigma"), 0.7)?,
                    center: self.f64_or(&format!("{prefix}.center"), 0.0)?,
                },
                "sech2" => CoeffSpec::Sech2 {
                    amp: self.complex(&format!("{prefix}.amp"))?,
                    scale: self.f64_or(&format!("{prefix}.scale"), 1.0)?,
                    center: self.f64_or(&format!("{prefix}.center"), 0.0)?,
                },
                "square_well" => CoeffSpec::SquareWell {
                    amp: self.complex(&format!("{prefix}.amp"))?,
                    width: self.f64_or(&format!("{prefix}.width"), 2.0)?,
                },
                other => bail!("unknown coefficient kind {other:?} for u_{j}"),
            };
            coeffs.push(spec);
        }
        let p = Potential::new(n, grid, coeffs, self.decay_tol()?)?;
        p.check_no_bound_state()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_build() {
        let text = "\
schema_version = 1
n = 2
grid.x_max = 20   # half-width
grid.h = 0.01
coeff.0.kind = gaussian
coeff.0.amp = 0.1,0.0
coeff.0.sigma = 0.7
";
        let cfg = Config::parse(text).unwrap();
        assert_eq!(cfg.n().unwrap(), 2);
        let p = cfg.potential(Path::new(".")).unwrap();
        assert!(p.eval(0, 0.0).re > 0.09);
        // Canonical form is comment-free and sorted, so hashing is stable.
        let cfg2 = Config::parse("n = 2\nschema_version = 1\ngrid.h = 0.01\ngrid.x_max = 20\ncoeff.0.kind = gaussian\ncoeff.0.amp = 0.1,0.0\ncoeff.0.sigma = 0.7\n").unwrap();
        assert_eq!(cfg.hash(), cfg2.hash());
    }

    #[test]
    fn schema_version_enforced() {
        assert!(Config::parse("schema_version = 99\nn = 2\n").is_err());
        assert!(Config::parse("n = 2\n").is_err());
    }

    #[test]
    fn bad_tolerance_rejected() {
        let cfg = Config::parse("schema_version = 1\nn = 2\ntol.det = -1\n").unwrap();
        assert!(cfg.validate(Path::new(".")).is_err());
    }
}
