//! Batch entry point: sectioned run-config parsing, job execution, report
//! and data emission.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::{write_csv, write_jsonl};
use crate::dynamics::{simulate, write_trajectory_jsonl, DynamicsMode};
use crate::sampler::{validate_envelope, MarkLaw, RandomStream};
use crate::space::{Bump, IntensityDensity, Window};
use crate::verify::{adjudicate, suite_filtered, Fixture, MCReport};
use crate::{Error, Result, Scalar};

fn cfg_err(line: usize, message: impl Into<String>) -> Error {
    Error::Config { line, message: message.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DensityCfg {
    Constant { level: Scalar },
    Gaussian { amplitude: Scalar, center: Vec<Scalar> },
    Poly { constant: Scalar, coeffs: Vec<Scalar> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceCfg {
    pub dimension: usize,
    pub lower: Vec<Scalar>,
    pub upper: Vec<Scalar>,
    pub density: DensityCfg,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TauCfg {
    Delta { mass: Scalar, atom: Scalar },
    Mixture { mass: Scalar, atoms: Vec<Scalar>, weights: Vec<Scalar> },
    Gamma { mass: Scalar, shape: Scalar, scale: Scalar },
    Uniform { mass: Scalar, lo: Scalar, hi: Scalar },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BumpCfg {
    pub center: Vec<Scalar>,
    pub radius: Vec<Scalar>,
    pub amplitude: Scalar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldCfg {
    pub bump: String,
    pub amplitudes: Vec<Scalar>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Sample,
    Verify,
    Simulate,
    Adjudicate,
}

impl CommandKind {
    fn parse(s: &str, line: usize) -> Result<Self> {
        match s {
            "sample" => Ok(CommandKind::Sample),
            "verify" => Ok(CommandKind::Verify),
            "simulate" => Ok(CommandKind::Simulate),
            "adjudicate" => Ok(CommandKind::Adjudicate),
            _ => Err(cfg_err(line, format!("unknown command `{s}`"))),
        }
    }

    fn render(&self) -> &'static str {
        match self {
            CommandKind::Sample => "sample",
            CommandKind::Verify => "verify",
            CommandKind::Simulate => "simulate",
            CommandKind::Adjudicate => "adjudicate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobCfg {
    pub command: CommandKind,
    pub check: String,
    pub n: u64,
    pub seed: u64,
    pub z_max: Scalar,
    pub dt: Scalar,
    pub t_final: Scalar,
    pub mode: DynamicsMode,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputCfg {
    pub dir: String,
    pub csv: bool,
}

/// Parsed and validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub space: SpaceCfg,
    pub tau: TauCfg,
    pub bumps: Vec<(String, BumpCfg)>,
    pub fields: Vec<(String, FieldCfg)>,
    pub job: JobCfg,
    pub output: OutputCfg,
}

struct Section {
    line: usize,
    entries: BTreeMap<String, (usize, String)>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn require(&mut self, key: &str) -> Result<(usize, String)> {
        self.take(key)
            .ok_or_else(|| cfg_err(self.line, format!("missing key `{key}`")))
    }

    fn finish(self) -> Result<()> {
        if let Some((key, (line, _))) = self.entries.into_iter().next() {
            return Err(cfg_err(line, format!("unknown key `{key}`")));
        }
        Ok(())
    }
}

fn parse_scalar((line, v): (usize, String)) -> Result<Scalar> {
    v.parse().map_err(|_| cfg_err(line, format!("expected a number, got `{v}`")))
}

fn parse_u64((line, v): (usize, String)) -> Result<u64> {
    v.parse().map_err(|_| cfg_err(line, format!("expected an integer, got `{v}`")))
}

fn parse_usize((line, v): (usize, String)) -> Result<usize> {
    v.parse().map_err(|_| cfg_err(line, format!("expected an integer, got `{v}`")))
}

fn parse_bool((line, v): (usize, String)) -> Result<bool> {
    match v.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(cfg_err(line, format!("expected true or false, got `{v}`"))),
    }
}

fn parse_vec((line, v): (usize, String)) -> Result<Vec<Scalar>> {
    v.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| cfg_err(line, format!("expected numbers, got `{t}`")))
        })
        .collect()
}

fn split_sections(text: &str) -> Result<Vec<(String, Section)>> {
    let mut sections: Vec<(String, Section)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('[') {
            let header = header
                .strip_suffix(']')
                .ok_or_else(|| cfg_err(line_no, "unterminated section header"))?
                .trim()
                .to_string();
            if sections.iter().any(|(h, _)| *h == header) {
                return Err(cfg_err(line_no, format!("duplicate section `[{header}]`")));
            }
            sections.push((header, Section { line: line_no, entries: BTreeMap::new() }));
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| cfg_err(line_no, "expected `key = value`"))?;
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        let (_, section) = sections
            .last_mut()
            .ok_or_else(|| cfg_err(line_no, "key outside any section"))?;
        if section.entries.contains_key(&key) {
            return Err(cfg_err(line_no, format!("duplicate key `{key}`")));
        }
        section.entries.insert(key, (line_no, value));
    }
    Ok(sections)
}

/// Parse the sectioned key-value run-config format; every error carries the
/// offending line number.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut space = None;
    let mut tau = None;
    let mut bumps: Vec<(String, BumpCfg)> = Vec::new();
    let mut fields: Vec<(String, (usize, FieldCfg))> = Vec::new();
    let mut job = None;
    let mut output = None;
    for (header, mut sec) in split_sections(text)? {
        let sec_line = sec.line;
        match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["space"] => {
                let dimension = parse_usize(sec.require("dimension")?)?;
                if dimension == 0 {
                    return Err(cfg_err(sec_line, "dimension must be >= 1"));
                }
                let lower = parse_vec(sec.require("lower")?)?;
                let upper = parse_vec(sec.require("upper")?)?;
                for v in [&lower, &upper] {
                    if v.len() != dimension {
                        return Err(cfg_err(sec_line, "window bounds must match the dimension"));
                    }
                }
                if lower.iter().zip(&upper).any(|(l, u)| l >= u) {
                    return Err(cfg_err(sec_line, "window lower bound must be below the upper"));
                }
                let (dline, dname) = sec.require("density")?;
                let density = match dname.as_str() {
                    "constant" => DensityCfg::Constant {
                        level: parse_scalar(sec.require("level")?)?,
                    },
                    "gaussian" => DensityCfg::Gaussian {
                        amplitude: parse_scalar(sec.require("amplitude")?)?,
                        center: parse_vec(sec.require("center")?)?,
                    },
                    "poly" => DensityCfg::Poly {
                        constant: parse_scalar(sec.require("constant")?)?,
                        coeffs: parse_vec(sec.require("coeffs")?)?,
                    },
                    _ => return Err(cfg_err(dline, format!("unknown density `{dname}`"))),
                };
                if let DensityCfg::Gaussian { center, .. } = &density {
                    if center.len() != dimension {
                        return Err(cfg_err(dline, "density center must match the dimension"));
                    }
                }
                sec.finish()?;
                space = Some(SpaceCfg { dimension, lower, upper, density });
            }
            ["tau"] => {
                let (lline, law) = sec.require("law")?;
                let mass = parse_scalar(sec.require("total_mass")?)?;
                if mass <= 0.0 {
                    return Err(cfg_err(lline, "total_mass must be positive"));
                }
                let parsed = match law.as_str() {
                    "delta" => TauCfg::Delta { mass, atom: parse_scalar(sec.require("atom")?)? },
                    "mixture" => TauCfg::Mixture {
                        mass,
                        atoms: parse_vec(sec.require("atoms")?)?,
                        weights: parse_vec(sec.require("weights")?)?,
                    },
                    "gamma" => TauCfg::Gamma {
                        mass,
                        shape: parse_scalar(sec.require("shape")?)?,
                        scale: parse_scalar(sec.require("scale")?)?,
                    },
                    "uniform" => TauCfg::Uniform {
                        mass,
                        lo: parse_scalar(sec.require("lo")?)?,
                        hi: parse_scalar(sec.require("hi")?)?,
                    },
                    _ => return Err(cfg_err(lline, format!("unknown mark law `{law}`"))),
                };
                if let TauCfg::Mixture { atoms, weights, .. } = &parsed {
                    if atoms.is_empty() || atoms.len() != weights.len() {
                        return Err(cfg_err(lline, "atoms and weights must have equal length"));
                    }
                    if atoms.iter().any(|&a| a <= 0.0) || weights.iter().any(|&w| w <= 0.0) {
                        return Err(cfg_err(lline, "atoms and weights must be positive"));
                    }
                }
                sec.finish()?;
                tau = Some(parsed);
            }
            ["bump", name] => {
                let cfg = BumpCfg {
                    center: parse_vec(sec.require("center")?)?,
                    radius: parse_vec(sec.require("radius")?)?,
                    amplitude: parse_scalar(sec.require("amplitude")?)?,
                };
                if cfg.center.len() != cfg.radius.len() {
                    return Err(cfg_err(sec_line, "center and radius must have equal length"));
                }
                if cfg.radius.iter().any(|&r| r <= 0.0) {
                    return Err(cfg_err(sec_line, "radius must be positive"));
                }
                sec.finish()?;
                bumps.push((name.to_string(), cfg));
            }
            ["field", name] => {
                let (bline, bump) = sec.require("bump")?;
                let cfg = FieldCfg { bump, amplitudes: parse_vec(sec.require("amplitudes")?)? };
                sec.finish()?;
                fields.push((name.to_string(), (bline, cfg)));
            }
            ["job"] => {
                let (cline, command) = sec.require("command")?;
                let command = CommandKind::parse(&command, cline)?;
                let check = sec.take("check").map_or("all".to_string(), |(_, v)| v);
                let n = sec.take("n").map_or(Ok(100_000), parse_u64)?;
                let seed = sec.take("seed").map_or(Ok(42), parse_u64)?;
                let z_max = sec.take("z_max").map_or(Ok(3.0), parse_scalar)?;
                let dt = sec.take("dt").map_or(Ok(1e-3), parse_scalar)?;
                let t_final = sec.take("T").map_or(Ok(0.25), parse_scalar)?;
                let mode = match sec.take("mode") {
                    None => DynamicsMode::MarkWeighted,
                    Some((mline, m)) => match m.as_str() {
                        "mark_weighted" => DynamicsMode::MarkWeighted,
                        "unit" => DynamicsMode::Unit,
                        _ => return Err(cfg_err(mline, format!("unknown mode `{m}`"))),
                    },
                };
                let stride = sec.take("stride").map_or(Ok(1), parse_usize)?;
                if n < 100 {
                    return Err(cfg_err(sec_line, "n must be at least 100"));
                }
                if !(dt > 0.0 && dt <= 0.01) {
                    return Err(cfg_err(sec_line, "dt must lie in (0, 0.01]"));
                }
                if stride == 0 {
                    return Err(cfg_err(sec_line, "stride must be >= 1"));
                }
                sec.finish()?;
                job = Some(JobCfg { command, check, n, seed, z_max, dt, t_final, mode, stride });
            }
            ["output"] => {
                let dir = sec.take("dir").map_or("out".to_string(), |(_, v)| v);
                let csv = sec.take("csv").map_or(Ok(false), parse_bool)?;
                sec.finish()?;
                output = Some(OutputCfg { dir, csv });
            }
            _ => return Err(cfg_err(sec_line, format!("unknown section `[{header}]`"))),
        }
    }
    let space = space.ok_or_else(|| cfg_err(0, "missing [space] section"))?;
    let tau = tau.ok_or_else(|| cfg_err(0, "missing [tau] section"))?;
    let job = job.ok_or_else(|| cfg_err(0, "missing [job] section"))?;
    let output = output.unwrap_or(OutputCfg { dir: "out".to_string(), csv: false });
    // resolve references and dimension constraints
    let mut resolved_fields = Vec::new();
    for (name, (bline, cfg)) in fields {
        if !bumps.iter().any(|(b, _)| *b == cfg.bump) {
            return Err(cfg_err(bline, format!("undefined bump `{}`", cfg.bump)));
        }
        if cfg.amplitudes.len() != space.dimension {
            return Err(cfg_err(bline, "field amplitudes must match the dimension"));
        }
        resolved_fields.push((name, cfg));
    }
    for (name, cfg) in &bumps {
        if cfg.center.len() != space.dimension {
            return Err(cfg_err(0, format!("bump `{name}` does not match the dimension")));
        }
    }
    Ok(RunConfig { space, tau, bumps, fields: resolved_fields, job, output })
}

fn join(v: &[Scalar]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ")
}

/// Render a configuration back to the canonical text form; `parse_config`
/// of the output reproduces the input structure.
pub fn render_config(c: &RunConfig) -> String {
    let mut s = String::new();
    s.push_str("[space]\n");
    s.push_str(&format!("dimension = {}\n", c.space.dimension));
    s.push_str(&format!("lower = {}\n", join(&c.space.lower)));
    s.push_str(&format!("upper = {}\n", join(&c.space.upper)));
    match &c.space.density {
        DensityCfg::Constant { level } => {
            s.push_str(&format!("density = constant\nlevel = {level}\n"));
        }
        DensityCfg::Gaussian { amplitude, center } => {
            s.push_str(&format!(
                "density = gaussian\namplitude = {amplitude}\ncenter = {}\n",
                join(center)
            ));
        }
        DensityCfg::Poly { constant, coeffs } => {
            s.push_str(&format!(
                "density = poly\nconstant = {constant}\ncoeffs = {}\n",
                join(coeffs)
            ));
        }
    }
    s.push_str("\n[tau]\n");
    match &c.tau {
        TauCfg::Delta { mass, atom } => {
            s.push_str(&format!("law = delta\ntotal_mass = {mass}\natom = {atom}\n"));
        }
        TauCfg::Mixture { mass, atoms, weights } => {
            s.push_str(&format!(
                "law = mixture\ntotal_mass = {mass}\natoms = {}\nweights = {}\n",
                join(atoms),
                join(weights)
            ));
        }
        TauCfg::Gamma { mass, shape, scale } => {
            s.push_str(&format!(
                "law = gamma\ntotal_mass = {mass}\nshape = {shape}\nscale = {scale}\n"
            ));
        }
        TauCfg::Uniform { mass, lo, hi } => {
            s.push_str(&format!("law = uniform\ntotal_mass = {mass}\nlo = {lo}\nhi = {hi}\n"));
        }
    }
    for (name, b) in &c.bumps {
        s.push_str(&format!(
            "\n[bump {name}]\ncenter = {}\nradius = {}\namplitude = {}\n",
            join(&b.center),
            join(&b.radius),
            b.amplitude
        ));
    }
    for (name, f) in &c.fields {
        s.push_str(&format!(
            "\n[field {name}]\nbump = {}\namplitudes = {}\n",
            f.bump,
            join(&f.amplitudes)
        ));
    }
    let j = &c.job;
    s.push_str(&format!(
        "\n[job]\ncommand = {}\ncheck = {}\nn = {}\nseed = {}\nz_max = {}\ndt = {}\nT = {}\nmode = {}\nstride = {}\n",
        j.command.render(),
        j.check,
        j.n,
        j.seed,
        j.z_max,
        j.dt,
        j.t_final,
        match j.mode {
            DynamicsMode::MarkWeighted => "mark_weighted",
            DynamicsMode::Unit => "unit",
        },
        j.stride
    ));
    s.push_str(&format!("\n[output]\ndir = {}\ncsv = {}\n", c.output.dir, c.output.csv));
    s
}

/// Command-line overrides applied on top of the parsed config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub command: Option<CommandKind>,
    pub check: Option<String>,
    pub seed: Option<u64>,
    pub n: Option<u64>,
    pub out: Option<PathBuf>,
    pub csv: bool,
    pub z_max: Option<Scalar>,
}

pub fn build_density(space: &SpaceCfg) -> IntensityDensity {
    let window = Window::new(space.lower.clone(), space.upper.clone());
    match &space.density {
        DensityCfg::Constant { level } => IntensityDensity::constant(window, *level),
        DensityCfg::Gaussian { amplitude, center } => {
            IntensityDensity::gaussian(window, *amplitude, center.clone())
        }
        DensityCfg::Poly { constant, coeffs } => {
            IntensityDensity::poly_positive(window, *constant, coeffs.clone())
        }
    }
}

pub fn build_tau(tau: &TauCfg) -> MarkLaw {
    match tau {
        TauCfg::Delta { mass, atom } => MarkLaw::delta(*mass, *atom),
        TauCfg::Mixture { mass, atoms, weights } => {
            MarkLaw::mixture(*mass, atoms.clone(), weights.clone())
        }
        TauCfg::Gamma { mass, shape, scale } => MarkLaw::gamma(*mass, *shape, *scale),
        TauCfg::Uniform { mass, lo, hi } => MarkLaw::uniform(*mass, *lo, *hi),
    }
}

pub fn build_bump(cfg: &BumpCfg) -> Bump {
    Bump::new(cfg.center.clone(), cfg.radius.clone(), cfg.amplitude)
}

// Stable 64-bit FNV-1a content hash for data-file headers.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn write_reports(out_dir: &Path, reports: &[MCReport], csv: bool) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let json = serde_json::to_string_pretty(reports)?;
    fs::write(out_dir.join("report.json"), json + "\n")?;
    let metadata = serde_json::json!({
        "generated_unix_seconds": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    });
    fs::write(out_dir.join("metadata.json"), metadata.to_string() + "\n")?;
    if csv {
        let mut w = fs::File::create(out_dir.join("report.csv"))?;
        writeln!(w, "name,anchor,estimate,stderr,target,z,pass,n_samples,seed")?;
        for r in reports {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.name, r.anchor, r.estimate, r.stderr, r.target, r.z, r.pass, r.n_samples, r.seed
            )?;
        }
    }
    Ok(())
}

/// Execute the configured job; returns the process exit code.
pub fn run(config: &RunConfig, overrides: &Overrides) -> Result<i32> {
    let mut job = config.job.clone();
    if let Some(c) = overrides.command {
        job.command = c;
    }
    if let Some(c) = &overrides.check {
        job.check = c.clone();
    }
    if let Some(s) = overrides.seed {
        job.seed = s;
    }
    if let Some(n) = overrides.n {
        job.n = n;
    }
    if let Some(z) = overrides.z_max {
        job.z_max = z;
    }
    let out_dir = overrides
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.output.dir));
    let csv = config.output.csv || overrides.csv;
    let rho = build_density(&config.space);
    let tau = build_tau(&config.tau);
    validate_envelope(&rho, rho.domain(), 10_000)?;
    let fixture = Fixture::new(rho.clone(), tau)?;
    match job.command {
        CommandKind::Sample => {
            fs::create_dir_all(&out_dir)?;
            let mut w = fs::File::create(out_dir.join("data.jsonl"))?;
            let header = serde_json::json!({
                "seed": job.seed,
                "streams": job.n,
                "config_hash": format!("{:016x}", fnv1a(render_config(config).as_bytes())),
            });
            writeln!(w, "{header}")?;
            for i in 0..job.n {
                let omega = fixture.sample(RandomStream::new(job.seed, i))?;
                write_jsonl(&mut w, std::slice::from_ref(&omega))?;
            }
            if csv {
                let omega = fixture.sample(RandomStream::new(job.seed, 0))?;
                let mut cw = fs::File::create(out_dir.join("data.csv"))?;
                write_csv(&mut cw, &omega)?;
            }
            println!("wrote {} configurations to {}", job.n, out_dir.display());
            Ok(0)
        }
        CommandKind::Verify => {
            let group = if job.check == "all" { None } else { Some(job.check.as_str()) };
            let reports = suite_filtered(&fixture, job.seed, job.n, job.z_max, group)?;
            for r in &reports {
                println!("{}", r.summary_line());
            }
            write_reports(&out_dir, &reports, csv)?;
            Ok(if reports.iter().all(|r| r.pass) { 0 } else { 1 })
        }
        CommandKind::Simulate => {
            let omega0 = fixture.sample(RandomStream::new(job.seed, 0))?;
            let states = simulate(
                &omega0,
                &rho,
                job.dt,
                job.t_final,
                job.mode,
                RandomStream::new(job.seed, 1),
            );
            fs::create_dir_all(&out_dir)?;
            let mut w = fs::File::create(out_dir.join("trajectory.jsonl"))?;
            write_trajectory_jsonl(&mut w, &states, job.stride)?;
            println!(
                "simulated {} atoms to T={} ({} snapshots)",
                omega0.len(),
                job.t_final,
                states.len()
            );
            Ok(0)
        }
        CommandKind::Adjudicate => {
            let reports = adjudicate(&fixture, job.seed, job.n, job.z_max)?;
            for r in &reports {
                println!("{}", r.summary_line());
            }
            let verdict = |name: &str| reports.iter().find(|r| r.name == name).map(|r| r.pass);
            println!("--- adjudication ---");
            for (mode, sym) in [
                ("omega-metric", "symmetry-omega-metric"),
                ("gamma-metric", "symmetry-gamma-metric"),
                ("literal-weighting", "symmetry-literal-weighting"),
            ] {
                match verdict(sym) {
                    Some(true) => println!("{mode}: symmetric against the form"),
                    Some(false) => println!("{mode}: NOT symmetric against the form"),
                    None => println!("{mode}: no verdict"),
                }
            }
            write_reports(&out_dir, &reports, csv)?;
            let conclusive = verdict("symmetry-omega-metric") == Some(true);
            Ok(if conclusive { 0 } else { 1 })
        }
    }
}
