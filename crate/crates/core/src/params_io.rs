//! Plain-text persistence of fitted parameters and correlation fit reports.
//!
//! Parameter files hold one `[params]` block per fitted model:
//!
//! ```text
//! format = windemos-params
//! version = 1
//!
//! [params]
//! scope = local:KSEA
//! fitted_at = 2008-03-01T00:00:00Z
//! a_u = 0.1
//! ...
//! ```
//!
//! Numbers are written in their shortest round-trip form, so reading a file
//! back reproduces the parameters bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::{format_time, parse_time};
use crate::error::{Error, Result};
use crate::estimation::{EmosParameters, MeanCoeffs, MemberSlopes, VarCoeffs};
use crate::predict::SpeedEmosCoeffs;
use crate::sectors::{CorrelationFit, CorrelationModel, CorrelationSpec, SectorStats};

pub const PARAMS_FORMAT: &str = "windemos-params";
pub const CORRELATION_FORMAT: &str = "windemos-correlation";
pub const FORMAT_VERSION: u32 = 1;

type Block = BTreeMap<String, (String, usize)>;

struct KvFile {
    header: Block,
    sections: Vec<(usize, Block)>,
}

fn parse_kv(text: &str, name: &str, section: &str) -> Result<KvFile> {
    let err = |line: usize, message: String| Error::Parse { path: name.to_string(), line, message };
    let mut header = Block::new();
    let mut sections: Vec<(usize, Block)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if t.starts_with('[') {
            if t != format!("[{section}]") {
                return Err(err(line, format!("unexpected section {t}")));
            }
            sections.push((line, Block::new()));
            continue;
        }
        let (k, v) = t.split_once('=').ok_or_else(|| err(line, format!("expected key = value, found {t:?}")))?;
        let block = sections.last_mut().map_or(&mut header, |s| &mut s.1);
        if block.insert(k.trim().to_string(), (v.trim().to_string(), line)).is_some() {
            return Err(err(line, format!("duplicate key {}", k.trim())));
        }
    }
    Ok(KvFile { header, sections })
}

struct Reader<'a> {
    block: &'a Block,
    name: &'a str,
    line: usize,
}

impl Reader<'_> {
    fn err(&self, line: usize, message: String) -> Error {
        Error::Parse { path: self.name.to_string(), line, message }
    }

    fn raw(&self, key: &str) -> Result<(&str, usize)> {
        self.block
            .get(key)
            .map(|(v, l)| (v.as_str(), *l))
            .ok_or_else(|| self.err(self.line, format!("missing key {key}")))
    }

    fn opt_raw(&self, key: &str) -> Option<(&str, usize)> {
        self.block.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, v: &str, line: usize) -> Result<T> {
        v.parse().map_err(|_| self.err(line, format!("{key}: cannot parse {v:?}")))
    }

    fn f64(&self, key: &str) -> Result<f64> {
        let (v, l) = self.raw(key)?;
        let x: f64 = self.parse(key, v, l)?;
        if !x.is_finite() {
            return Err(self.err(l, format!("{key}: not finite")));
        }
        Ok(x)
    }

    fn opt_f64(&self, key: &str) -> Result<Option<f64>> {
        self.opt_raw(key).map(|_| self.f64(key)).transpose()
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let (v, l) = self.raw(key)?;
        self.parse(key, v, l)
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some((v, l)) = self.opt_raw(key) else {
            return Ok(None);
        };
        v.split(',').map(|x| self.parse(key, x.trim(), l)).collect::<Result<Vec<f64>>>().map(Some)
    }

    fn check_format(&self, expected: &str) -> Result<()> {
        let (fmt, l) = self.raw("format")?;
        if fmt != expected {
            return Err(self.err(l, format!("expected format {expected}, found {fmt}")));
        }
        let version: u32 = self.get("version")?;
        if version != FORMAT_VERSION {
            let l = self.raw("version")?.1;
            return Err(self.err(l, format!("unsupported version {version}")));
        }
        Ok(())
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn write_params_block(out: &mut String, p: &EmosParameters) {
    let m = &p.means;
    let v = &p.vars;
    let c = &p.corr.model;
    let _ = writeln!(out, "[params]");
    let _ = writeln!(out, "scope = {}", p.scope);
    let _ = writeln!(out, "fitted_at = {}", format_time(p.fitted_at));
    for (k, x) in [("a_u", m.a_u), ("b_u", m.b_u), ("a_v", m.a_v), ("b_v", m.b_v)] {
        let _ = writeln!(out, "{k} = {x}");
    }
    if let Some(sl) = &m.member_slopes {
        let _ = writeln!(out, "member_slopes_u = {}", join(&sl.u));
        let _ = writeln!(out, "member_slopes_v = {}", join(&sl.v));
    }
    for (k, x) in [("c_u", v.c_u), ("d_u", v.d_u), ("c_v", v.c_v), ("d_v", v.d_v)] {
        let _ = writeln!(out, "{k} = {x}");
    }
    let _ = writeln!(out, "r = {}\ns = {}\nk = {}\nphi = {}", c.r, c.s, c.k, c.phi);
    if let Some(rho) = p.corr.calm_rho {
        let _ = writeln!(out, "calm_rho = {rho}");
    }
    if let Some(sp) = &p.speed {
        let _ = writeln!(out, "speed_a = {}\nspeed_b = {}\nspeed_c = {}\nspeed_d = {}", sp.a, sp.b, sp.c, sp.d);
    }
    out.push('\n');
}

pub fn format_params(params: &[EmosParameters]) -> String {
    let mut out = format!("format = {PARAMS_FORMAT}\nversion = {FORMAT_VERSION}\n\n");
    for p in params {
        write_params_block(&mut out, p);
    }
    out
}

fn read_params_block(r: &Reader) -> Result<EmosParameters> {
    let member_slopes = match (r.list("member_slopes_u")?, r.list("member_slopes_v")?) {
        (Some(u), Some(v)) if u.len() == v.len() => Some(MemberSlopes { u, v }),
        (None, None) => None,
        _ => return Err(r.err(r.line, "member slopes must be given for both components with equal length".into())),
    };
    let (t, tl) = r.raw("fitted_at")?;
    let fitted_at = parse_time(t).map_err(|m| r.err(tl, m))?;
    let model = CorrelationModel::new(r.f64("r")?, r.f64("s")?, r.get("k")?, r.f64("phi")?)
        .map_err(|e| r.err(r.line, e.to_string()))?;
    let speed = match r.opt_raw("speed_a") {
        Some(_) => Some(SpeedEmosCoeffs {
            a: r.f64("speed_a")?,
            b: r.f64("speed_b")?,
            c: r.f64("speed_c")?,
            d: r.f64("speed_d")?,
        }),
        None => None,
    };
    let vars = VarCoeffs { c_u: r.f64("c_u")?, d_u: r.f64("d_u")?, c_v: r.f64("c_v")?, d_v: r.f64("d_v")? };
    if !vars.is_nonnegative() {
        return Err(r.err(r.line, "variance coefficients must be nonnegative".into()));
    }
    Ok(EmosParameters {
        means: MeanCoeffs {
            a_u: r.f64("a_u")?,
            b_u: r.f64("b_u")?,
            a_v: r.f64("a_v")?,
            b_v: r.f64("b_v")?,
            member_slopes,
        },
        vars,
        corr: CorrelationSpec { model, calm_rho: r.opt_f64("calm_rho")? },
        scope: r.get("scope").map_err(|_| r.err(r.line, "invalid scope".into()))?,
        fitted_at,
        speed,
    })
}

pub fn parse_params(text: &str, name: &str) -> Result<Vec<EmosParameters>> {
    let kv = parse_kv(text, name, "params")?;
    Reader { block: &kv.header, name, line: 1 }.check_format(PARAMS_FORMAT)?;
    kv.sections.iter().map(|(line, b)| read_params_block(&Reader { block: b, name, line: *line })).collect()
}

pub fn save_params(path: impl AsRef<Path>, params: &[EmosParameters]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_params(params)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<Vec<EmosParameters>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_params(&text, &path.display().to_string())
}

/// Correlation fit report: the chosen model at top level, then every
/// candidate under `k1.`, `k2.`, `k3.` and the sector statistics.
pub fn format_correlation_report(
    fits: &[CorrelationFit],
    best_k: u8,
    stats: &[SectorStats],
    calm_rho: Option<f64>,
) -> Result<String> {
    let best = fits
        .iter()
        .find(|f| f.model.k == best_k)
        .ok_or_else(|| Error::InvalidParameter(format!("no fit with k = {best_k}")))?;
    let mut out = format!("format = {CORRELATION_FORMAT}\nversion = {FORMAT_VERSION}\n");
    let m = &best.model;
    let _ = writeln!(out, "r = {}\ns = {}\nk = {}\nphi = {}\nrss = {}", m.r, m.s, m.k, m.phi, best.weighted_rss);
    if let Some(rho) = calm_rho {
        let _ = writeln!(out, "calm_rho = {rho}");
    }
    for (sector, res) in &best.residuals {
        let _ = writeln!(out, "residual_{} = {res}", sector.get());
    }
    for f in fits {
        let p = format!("k{}", f.model.k);
        let _ = writeln!(
            out,
            "{p}.r = {}\n{p}.s = {}\n{p}.phi = {}\n{p}.rss = {}\n{p}.phi_identified = {}\n{p}.constrained = {}",
            f.model.r, f.model.s, f.model.phi, f.weighted_rss, f.phi_identified, f.constrained
        );
    }
    for st in stats {
        let id = st.sector.get();
        let _ = writeln!(out, "sector_{id}.count = {}", st.count);
        if let Some(c) = st.corr {
            let _ = writeln!(out, "sector_{id}.corr = {c}");
        }
        if let Some(d) = st.center_dir {
            let _ = writeln!(out, "sector_{id}.center_dir = {d}");
        }
    }
    Ok(out)
}

/// Read the chosen correlation model (and calm-sector correlation, if any)
/// from a fit report.
pub fn parse_correlation(text: &str, name: &str) -> Result<CorrelationSpec> {
    parse_correlation_k(text, name, None)
}

/// Like [`parse_correlation`], but `k` selects one of the candidate fits
/// instead of the chosen one.
pub fn parse_correlation_k(text: &str, name: &str, k: Option<u8>) -> Result<CorrelationSpec> {
    let kv = parse_kv(text, name, "none")?;
    let r = Reader { block: &kv.header, name, line: 1 };
    r.check_format(CORRELATION_FORMAT)?;
    let model = match k {
        None => CorrelationModel::new(r.f64("r")?, r.f64("s")?, r.get("k")?, r.f64("phi")?),
        Some(k) => CorrelationModel::new(
            r.f64(&format!("k{k}.r"))?,
            r.f64(&format!("k{k}.s"))?,
            k,
            r.f64(&format!("k{k}.phi"))?,
        ),
    }
    .map_err(|e| r.err(1, e.to_string()))?;
    Ok(CorrelationSpec { model, calm_rho: r.opt_f64("calm_rho")? })
}

pub fn load_correlation(path: impl AsRef<Path>, k: Option<u8>) -> Result<CorrelationSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_correlation_k(&text, &path.display().to_string(), k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::Scope;
    use crate::sectors::{select_correlation, SectorId};
    use chrono::{TimeZone, Utc};

    fn sample_params() -> Vec<EmosParameters> {
        let base = EmosParameters {
            means: MeanCoeffs { a_u: 0.1, b_u: 0.95, a_v: -0.30000000000000004, b_v: 1.05, member_slopes: None },
            vars: VarCoeffs { c_u: 1.2, d_u: 0.4, c_v: 0.0, d_v: 1e-300 },
            corr: CorrelationModel::new(0.2, -0.15, 2, -61.9).unwrap().into(),
            scope: Scope::Regional,
            fitted_at: Utc.with_ymd_and_hms(2008, 3, 1, 0, 0, 0).unwrap(),
            speed: None,
        };
        let mut local = base.clone();
        local.scope = Scope::Local("KSEA".into());
        local.means = local.means.to_member_form(3);
        local.corr.calm_rho = Some(0.05);
        local.speed = Some(SpeedEmosCoeffs { a: 0.3, b: 0.9, c: 0.5, d: 0.25 });
        vec![base, local]
    }

    #[test]
    fn params_round_trip() {
        let p = sample_params();
        let text = format_params(&p);
        assert_eq!(parse_params(&text, "mem").unwrap(), p);
        assert_eq!(format_params(&parse_params(&text, "mem").unwrap()), text);
    }

    #[test]
    fn params_errors() {
        let text = format_params(&sample_params());
        let bad = text.replace("version = 1", "version = 2");
        assert!(matches!(parse_params(&bad, "f"), Err(Error::Parse { line: 2, .. })));
        let bad = text.replacen("c_u = 1.2", "c_u = -1", 1);
        assert!(parse_params(&bad, "f").is_err());
        let bad = text.replacen("d_u = 0.4\n", "", 1);
        assert!(parse_params(&bad, "f").is_err());
        let bad = text.replacen("a_u = 0.1", "a_u = x", 1);
        match parse_params(&bad, "f") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn correlation_report_round_trip() {
        let model = CorrelationModel::new(0.3, 0.1, 2, 40.0).unwrap();
        let stats: Vec<SectorStats> = SectorId::all()
            .map(|s| {
                let center_dir = s.center_direction();
                SectorStats { sector: s, count: 50, corr: center_dir.map(|d| model.eval(d)), center_dir }
            })
            .collect();
        let (fits, best) = select_correlation(&stats).unwrap();
        let text = format_correlation_report(&fits, best, &stats, Some(0.02)).unwrap();
        for key in ["k1.r", "k2.rss", "k3.phi", "residual_5", "sector_1.count"] {
            assert!(text.contains(&format!("{key} = ")), "{key}");
        }
        let spec = parse_correlation(&text, "mem").unwrap();
        let chosen = fits.iter().find(|f| f.model.k == best).unwrap();
        assert_eq!(spec.model, chosen.model);
        assert_eq!(spec.calm_rho, Some(0.02));
        let k3 = parse_correlation_k(&text, "mem", Some(3)).unwrap();
        assert_eq!(k3.model, fits[2].model);
        assert!(parse_correlation_k(&text, "mem", Some(4)).is_err());
    }
}
