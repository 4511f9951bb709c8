//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use nematiq_core::diagnostics::DiagnosticsConfig;
use nematiq_core::fields::make_grid;
use nematiq_core::integrator::{standard_h, DirectorInit, InitialData, Scheme, SolverConfig, VelocityInit};
use nematiq_core::operators::{DirectorNoise, PolynomialF, VelocityNoise};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Ensemble,
    Picard,
    Verify,
    ConvolutionTest,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Ensemble => "ensemble",
            Command::Picard => "picard",
            Command::Verify => "verify",
            Command::ConvolutionTest => "convolution-test",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Ndjson,
}

/// Key, default, description. The order is the manifest order.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("nx", "32", "grid points in x"),
    ("ny", "32", "grid points in y"),
    ("dealias", "2/3", "retained fraction of the wavenumber range"),
    ("dt", "0.001", "time step"),
    ("T", "1", "horizon"),
    ("poly", "gl(1)", "gl(eps) or coeffs(a0,a1,...)"),
    ("h", "standard", "director noise profile: standard or off"),
    ("h_amp", "0.5", "director noise amplitude"),
    ("vnoise", "smoothed(1,0.5,8)", "smoothed(s,sigma0,J), additive(sigma0,J) or off"),
    ("scheme", "semi_implicit_em", "semi_implicit_em or exponential_em"),
    ("k_levels", "10,100,1000", "stopping-time thresholds"),
    ("blowup_k", "10000", "Q above blowup_k^2 ends a run"),
    ("blowup_fatal", "true", "blow-up exits with code 3"),
    ("seed", "0", "first seed"),
    ("seeds", "1", "seed count, or an explicit list a,b,c"),
    ("v_init", "taylor_green(0.5)", "zero, taylor_green(a) or random(a,k_scale)"),
    ("n_init", "perturbed(1,0,0,0.5,1.5)", "zero, constant(x,y,z), sine_x(a) or perturbed(x,y,z,a,k_scale)"),
    ("init_seed", "0", "seed of random initial data"),
    ("noise_dt", "none", "step of the underlying Brownian path"),
    ("nonlinear", "true", "keep B, B~, M and f in the drift"),
    ("kappa", "1,1,1,1,1,1,1,1,1", "weights of the Phi exponent"),
    ("p", "auto", "moment exponent"),
    ("output_dir", "out", "artifact directory"),
    ("output_stride", "1", "trace row every this many steps"),
    ("format", "csv", "trace format: csv or ndjson"),
    ("cutoff_levels", "2,4,8", "truncation levels n"),
    ("window", "0.01", "Picard window length"),
    ("picard_tol", "1e-8", "fixed-point tolerance"),
    ("picard_max_iter", "30", "fixed-point iteration cap"),
    ("samples", "100", "random corpus size for verify and convolution-test"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: `{}`: {}", self.key, self.message),
            None => write!(f, "`{}`: {}", self.key, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub command: Command,
    pub solver: SolverConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub format: Format,
    pub blowup_fatal: bool,
    pub cutoff_levels: Vec<f64>,
    pub window: f64,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub samples: usize,
    /// Every key with its effective value, presets expanded.
    pub resolved: BTreeMap<String, String>,
}

impl RunConfig {
    /// `key = value` lines of the resolved configuration.
    pub fn canonical_text(&self) -> String {
        KEYS.iter().map(|(k, _, _)| format!("{k} = {}\n", self.resolved[*k])).collect()
    }

    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.canonical_text().as_bytes()))
    }
}

struct Raw {
    values: BTreeMap<String, (String, Option<usize>)>,
}

impl Raw {
    fn get(&self, key: &str) -> (&str, Option<usize>) {
        match self.values.get(key) {
            Some((v, l)) => (v.as_str(), *l),
            None => (KEYS.iter().find(|(k, _, _)| *k == key).expect("known key").1, None),
        }
    }

    fn err(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError { key: key.into(), line: self.get(key).1, message: message.into() }
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        let (v, _) = self.get(key);
        v.parse().map_err(|_| self.err(key, format!("cannot parse `{v}` as {}", std::any::type_name::<T>())))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, ConfigError> {
        let (v, _) = self.get(key);
        split_args(v).iter().map(|s| s.parse().map_err(|_| self.err(key, format!("cannot parse `{s}` in list")))).collect()
    }

    fn fraction(&self, key: &str) -> Result<f64, ConfigError> {
        let (v, _) = self.get(key);
        let bad = || self.err(key, format!("cannot parse `{v}` as a number"));
        match v.split_once('/') {
            Some((a, b)) => Ok(a.trim().parse::<f64>().map_err(|_| bad())? / b.trim().parse::<f64>().map_err(|_| bad())?),
            None => v.parse().map_err(|_| bad()),
        }
    }

    fn call(&self, key: &str) -> Result<(String, Vec<f64>), ConfigError> {
        let (v, _) = self.get(key);
        let (name, args) = match v.split_once('(') {
            Some((n, rest)) => {
                let inner = rest.strip_suffix(')').ok_or_else(|| self.err(key, format!("unbalanced parentheses in `{v}`")))?;
                (n.trim(), split_args(inner))
            }
            None => (v, Vec::new()),
        };
        let nums = args.iter().map(|a| a.parse().map_err(|_| self.err(key, format!("bad argument `{a}`")))).collect::<Result<_, _>>()?;
        Ok((name.to_string(), nums))
    }
}

fn split_args(s: &str) -> Vec<String> {
    s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect()
}

fn arity(raw: &Raw, key: &str, name: &str, args: &[f64], n: usize) -> Result<(), ConfigError> {
    if args.len() != n {
        return Err(raw.err(key, format!("{name} takes {n} arguments, got {}", args.len())));
    }
    Ok(())
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
}

/// Read `key = value` lines into raw entries; `#` starts a comment.
fn read_lines(text: &str) -> Result<BTreeMap<String, (String, Option<usize>)>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError { key: line.into(), line: Some(i + 1), message: "expected `key = value`".into() })?;
        let k = k.trim().to_string();
        if !KEYS.iter().any(|(name, _, _)| *name == k) {
            return Err(ConfigError { key: k, line: Some(i + 1), message: "unknown key".into() });
        }
        out.insert(k, (v.trim().to_string(), Some(i + 1)));
    }
    Ok(out)
}

/// Parse config text with command-line overrides applied on top.
pub fn parse_config(command: Command, text: &str, overrides: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    let mut values = read_lines(text)?;
    for (k, v) in overrides {
        if !KEYS.iter().any(|(name, _, _)| name == k) {
            return Err(ConfigError { key: k.clone(), line: None, message: "unknown key".into() });
        }
        values.insert(k.clone(), (v.clone(), None));
    }
    build(command, &Raw { values })
}

fn build(command: Command, raw: &Raw) -> Result<RunConfig, ConfigError> {
    let mut resolved = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        resolved.insert(k.to_string(), v);
    };

    let nx: usize = raw.parse("nx")?;
    let ny: usize = raw.parse("ny")?;
    let dealias = raw.fraction("dealias")?;
    let grid = make_grid(nx, ny, dealias).map_err(|e| raw.err("nx", e.to_string()))?;
    put("nx", nx.to_string());
    put("ny", ny.to_string());
    put("dealias", format!("{dealias}"));

    let dt: f64 = raw.parse("dt")?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(raw.err("dt", "must be positive"));
    }
    let t_end: f64 = raw.parse("T")?;
    if !(t_end >= dt) {
        return Err(raw.err("T", "must be at least dt"));
    }
    put("dt", format!("{dt}"));
    put("T", format!("{t_end}"));

    let (name, args) = raw.call("poly")?;
    let poly = match name.as_str() {
        "gl" => {
            arity(raw, "poly", "gl", &args, 1)?;
            PolynomialF::gl(args[0])
        }
        "coeffs" => PolynomialF::new(args.clone()),
        _ => return Err(raw.err("poly", format!("unknown preset `{name}`"))),
    }
    .map_err(|e| raw.err("poly", e.to_string()))?;
    put("poly", format!("coeffs({})", fmt_list(poly.coeffs())));

    let h_amp: f64 = raw.parse("h_amp")?;
    let (h_name, _) = raw.call("h")?;
    let dnoise = match h_name.as_str() {
        "standard" if h_amp != 0.0 => DirectorNoise::new(standard_h(&grid), h_amp).map_err(|e| raw.err("h_amp", e.to_string()))?,
        "standard" | "off" => DirectorNoise::off(&grid),
        _ => return Err(raw.err("h", format!("unknown profile `{h_name}`"))),
    };
    put("h", if dnoise.is_off() { "off".into() } else { "standard".into() });
    put("h_amp", if dnoise.is_off() { "0".into() } else { format!("{h_amp}") });

    let (vn, args) = raw.call("vnoise")?;
    let vnoise = match vn.as_str() {
        "smoothed" => {
            arity(raw, "vnoise", "smoothed", &args, 3)?;
            put("vnoise", format!("smoothed({},{},{})", args[0], args[1], args[2]));
            VelocityNoise::smoothed(args[0], args[1], args[2] as usize).map_err(|e| raw.err("vnoise", e.to_string()))?
        }
        "additive" => {
            arity(raw, "vnoise", "additive", &args, 2)?;
            put("vnoise", format!("additive({},{})", args[0], args[1]));
            VelocityNoise::additive(&grid, args[0], args[1] as usize)
        }
        "off" => {
            put("vnoise", "off".into());
            VelocityNoise::off()
        }
        _ => return Err(raw.err("vnoise", format!("unknown preset `{vn}`"))),
    };

    let scheme = match raw.get("scheme").0 {
        "semi_implicit_em" => Scheme::SemiImplicitEm,
        "exponential_em" => Scheme::ExponentialEm,
        other => return Err(raw.err("scheme", format!("unknown scheme `{other}`"))),
    };
    put("scheme", raw.get("scheme").0.to_string());

    let k_levels: Vec<f64> = raw.list("k_levels")?;
    if k_levels.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(raw.err("k_levels", "must be strictly increasing"));
    }
    put("k_levels", fmt_list(&k_levels));
    let blowup_k: f64 = raw.parse("blowup_k")?;
    put("blowup_k", format!("{blowup_k}"));
    let blowup_fatal: bool = raw.parse("blowup_fatal")?;
    put("blowup_fatal", blowup_fatal.to_string());

    let seed: u64 = raw.parse("seed")?;
    let seeds: Vec<u64> = {
        let v = raw.get("seeds").0;
        if v.contains(',') {
            raw.list("seeds")?
        } else {
            let n: u64 = raw.parse("seeds")?;
            if n == 0 {
                return Err(raw.err("seeds", "need at least one seed"));
            }
            (seed..seed + n).collect()
        }
    };
    put("seed", seed.to_string());
    let contiguous = seeds.iter().enumerate().all(|(i, &s)| s == seed + i as u64);
    put(
        "seeds",
        if contiguous {
            seeds.len().to_string()
        } else {
            // a trailing comma keeps a one-element list from reading as a count
            seeds.iter().map(|s| format!("{s},")).collect::<String>()
        },
    );

    let (vi, a) = raw.call("v_init")?;
    let v = match vi.as_str() {
        "zero" => VelocityInit::Zero,
        "taylor_green" => {
            arity(raw, "v_init", "taylor_green", &a, 1)?;
            VelocityInit::TaylorGreen(a[0])
        }
        "random" => {
            arity(raw, "v_init", "random", &a, 2)?;
            VelocityInit::Random { amplitude: a[0], k_scale: a[1] }
        }
        _ => return Err(raw.err("v_init", format!("unknown preset `{vi}`"))),
    };
    put("v_init", raw.get("v_init").0.replace(' ', ""));
    let (ni, a) = raw.call("n_init")?;
    let n = match ni.as_str() {
        "zero" => DirectorInit::Zero,
        "constant" => {
            arity(raw, "n_init", "constant", &a, 3)?;
            DirectorInit::Constant([a[0], a[1], a[2]])
        }
        "sine_x" => {
            arity(raw, "n_init", "sine_x", &a, 1)?;
            DirectorInit::SineX(a[0])
        }
        "perturbed" => {
            arity(raw, "n_init", "perturbed", &a, 5)?;
            DirectorInit::Perturbed { base: [a[0], a[1], a[2]], amplitude: a[3], k_scale: a[4] }
        }
        _ => return Err(raw.err("n_init", format!("unknown preset `{ni}`"))),
    };
    put("n_init", raw.get("n_init").0.replace(' ', ""));
    let init_seed: u64 = raw.parse("init_seed")?;
    put("init_seed", init_seed.to_string());

    let noise_dt = match raw.get("noise_dt").0 {
        "none" => None,
        _ => Some(raw.parse::<f64>("noise_dt")?),
    };
    put("noise_dt", noise_dt.map(|x| format!("{x}")).unwrap_or_else(|| "none".into()));
    let nonlinear: bool = raw.parse("nonlinear")?;
    put("nonlinear", nonlinear.to_string());

    let kappa: Vec<f64> = raw.list("kappa")?;
    let kappa: [f64; 9] = kappa.try_into().map_err(|_| raw.err("kappa", "needs 9 weights"))?;
    put("kappa", fmt_list(&kappa));
    let p = match raw.get("p").0 {
        "auto" => None,
        _ => Some(raw.parse::<f64>("p")?),
    };
    put("p", p.map(|x| format!("{x}")).unwrap_or_else(|| "auto".into()));
    let diagnostics = DiagnosticsConfig { kappa, p, ..DiagnosticsConfig::default() };
    diagnostics.validate().map_err(|e| raw.err("kappa", e.to_string()))?;

    let output_dir = PathBuf::from(raw.get("output_dir").0);
    put("output_dir", raw.get("output_dir").0.to_string());
    let output_stride: usize = raw.parse("output_stride")?;
    if output_stride == 0 {
        return Err(raw.err("output_stride", "must be at least 1"));
    }
    put("output_stride", output_stride.to_string());
    let format = match raw.get("format").0 {
        "csv" => Format::Csv,
        "ndjson" => Format::Ndjson,
        other => return Err(raw.err("format", format!("unknown format `{other}`"))),
    };
    put("format", raw.get("format").0.to_string());

    let cutoff_levels: Vec<f64> = raw.list("cutoff_levels")?;
    if cutoff_levels.is_empty() || cutoff_levels.iter().any(|&n| !(n > 0.0)) {
        return Err(raw.err("cutoff_levels", "levels must be positive"));
    }
    put("cutoff_levels", fmt_list(&cutoff_levels));
    let window: f64 = raw.parse("window")?;
    let window_steps = window / dt;
    if !(window > 0.0) || (window_steps - window_steps.round()).abs() > 1e-9 * window_steps.max(1.0) {
        return Err(raw.err("window", format!("must be a positive multiple of dt = {dt}")));
    }
    put("window", format!("{window}"));
    let picard_tol: f64 = raw.parse("picard_tol")?;
    if !(picard_tol > 0.0) {
        return Err(raw.err("picard_tol", "must be positive"));
    }
    put("picard_tol", format!("{picard_tol}"));
    let picard_max_iter: usize = raw.parse("picard_max_iter")?;
    if picard_max_iter == 0 {
        return Err(raw.err("picard_max_iter", "must be at least 1"));
    }
    put("picard_max_iter", picard_max_iter.to_string());
    let samples: usize = raw.parse("samples")?;
    if samples == 0 {
        return Err(raw.err("samples", "must be at least 1"));
    }
    put("samples", samples.to_string());

    let solver = SolverConfig {
        grid,
        dt,
        t_end,
        poly,
        dnoise,
        vnoise,
        scheme,
        k_levels,
        seed,
        initial: InitialData::Preset { v, n, seed: init_seed },
        blowup_k,
        noise_dt,
        output_stride,
        nonlinear,
        keep_states: false,
        diagnostics,
    };
    solver.validate().map_err(|e| {
        let key = match e {
            nematiq_core::Error::Range(ref m) if m.contains("noise_dt") => "noise_dt",
            _ => "T",
        };
        raw.err(key, e.to_string())
    })?;

    Ok(RunConfig {
        command,
        solver,
        seeds,
        output_dir,
        format,
        blowup_fatal,
        cutoff_levels,
        window,
        picard_tol,
        picard_max_iter,
        samples,
        resolved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        parse_config(Command::Simulate, text, &[])
    }

    #[test]
    fn empty_text_gives_defaults() {
        let c = parse("").unwrap();
        assert_eq!(c.solver.grid.nx(), 32);
        assert_eq!(c.solver.dt, 1e-3);
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.resolved.len(), KEYS.len());
    }

    #[test]
    fn zero_dt_names_key() {
        let e = parse("# comment\ndt = 0\n").unwrap_err();
        assert_eq!(e.key, "dt");
        assert_eq!(e.line, Some(2));
    }

    #[test]
    fn gl_preset_expands() {
        let c = parse("poly = gl(0.5)").unwrap();
        assert_eq!(c.solver.poly.degree(), 1);
        assert_eq!(c.solver.poly.coeffs(), &[4.0, -4.0]);
        assert_eq!(c.resolved["poly"], "coeffs(4,-4)");
    }

    #[test]
    fn errors_carry_key_and_line() {
        let e = parse("nx = 32\nbogus = 1").unwrap_err();
        assert_eq!((e.key.as_str(), e.line), ("bogus", Some(2)));
        let e = parse("nx = 32\n\nseeds = many").unwrap_err();
        assert_eq!((e.key.as_str(), e.line), ("seeds", Some(3)));
        let e = parse("k_levels = 3,2").unwrap_err();
        assert_eq!(e.key, "k_levels");
        let e = parse("vnoise = smoothed(1,2)").unwrap_err();
        assert_eq!(e.key, "vnoise");
        assert!(parse("dt = 0.001\nT = 0.0015").is_err());
    }

    #[test]
    fn overrides_win_and_seed_lists() {
        let c = parse_config(Command::Ensemble, "seeds = 2\nseed = 5", &[("seeds".into(), "4".into())]).unwrap();
        assert_eq!(c.seeds, vec![5, 6, 7, 8]);
        let c = parse("seeds = 3,1,9").unwrap();
        assert_eq!(c.seeds, vec![3, 1, 9]);
        assert!(parse_config(Command::Simulate, "", &[("nope".into(), "1".into())]).is_err());
    }

    #[test]
    fn hash_ignores_spelling() {
        let a = parse("poly = gl(0.5)").unwrap();
        let b = parse("poly = coeffs(4, -4)").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), parse("poly = gl(0.25)").unwrap().hash());
        let again = parse(&a.canonical_text()).unwrap();
        assert_eq!(again.hash(), a.hash());
    }
}
