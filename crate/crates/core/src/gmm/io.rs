//! Text serialization of trained models.
//!
//! ```text
//! gmmcache-model 1
//! k 2
//! standardizer <mean_p> <scale_p> <mean_t> <scale_t>
//! component <weight> <mu_p> <mu_t> <s_pp> <s_pt> <s_tp> <s_tt>
//! component ...
//! threshold <value|none>
//! ```
//!
//! Floats carry 17 significant digits, so a round trip is exact.

use super::{Cov2, Gaussian2, GmmError, GmmModel, Standardizer};
use std::io::{BufRead, Write};

pub const MODEL_HEADER: &str = "gmmcache-model";
const VERSION: u32 = 1;

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_model<W: Write>(mut out: W, model: &GmmModel) -> std::io::Result<()> {
    writeln!(out, "{MODEL_HEADER} {VERSION}")?;
    writeln!(out, "k {}", model.k())?;
    let st = model.standardizer();
    writeln!(
        out,
        "standardizer {} {} {} {}",
        num(st.mean[0]),
        num(st.scale[0]),
        num(st.mean[1]),
        num(st.scale[1])
    )?;
    for (w, g) in model.weights().iter().zip(model.components()) {
        let (m, c) = (g.mean(), g.cov());
        writeln!(
            out,
            "component {} {} {} {} {} {} {}",
            num(*w),
            num(m[0]),
            num(m[1]),
            num(c.pp),
            num(c.pt),
            num(c.pt),
            num(c.tt)
        )?;
    }
    match model.threshold() {
        Some(t) => writeln!(out, "threshold {}", num(t))?,
        None => writeln!(out, "threshold none")?,
    }
    out.flush()
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn err(&self, reason: impl Into<String>) -> GmmError {
        GmmError::Format { line: self.line, reason: reason.into() }
    }

    /// Next line split into its keyword and `n` numeric fields.
    fn expect(&mut self, key: &str, n: usize) -> Result<Vec<String>, GmmError> {
        self.line += 1;
        let text = match self.inner.next() {
            Some(l) => l?,
            None => return Err(self.err(format!("unexpected end of file, expected `{key}`"))),
        };
        let mut fields = text.split_whitespace().map(str::to_owned);
        if fields.next().as_deref() != Some(key) {
            return Err(self.err(format!("expected `{key}`")));
        }
        let rest: Vec<String> = fields.collect();
        if rest.len() != n {
            return Err(self.err(format!("`{key}` takes {n} fields, got {}", rest.len())));
        }
        Ok(rest)
    }

    fn floats(&mut self, key: &str, n: usize) -> Result<Vec<f64>, GmmError> {
        let fields = self.expect(key, n)?;
        fields
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| self.err(format!("bad number `{f}`"))))
            .collect()
    }
}

pub fn read_model<R: BufRead>(input: R) -> Result<GmmModel, GmmError> {
    let mut lines = Lines { inner: input.lines(), line: 0 };
    let version = lines.expect(MODEL_HEADER, 1)?;
    if version[0] != VERSION.to_string() {
        return Err(lines.err(format!("unsupported model version {}", version[0])));
    }
    let k: usize = lines.expect("k", 1)?[0].parse().map_err(|_| lines.err("bad component count"))?;
    if k == 0 {
        return Err(lines.err("component count must be at least 1"));
    }
    let s = lines.floats("standardizer", 4)?;
    let standardizer = Standardizer { mean: [s[0], s[2]], scale: [s[1], s[3]] };

    let mut weights = Vec::with_capacity(k);
    let mut comps = Vec::with_capacity(k);
    for _ in 0..k {
        let f = lines.floats("component", 7)?;
        if f[4] != f[5] {
            return Err(lines.err("covariance is not symmetric"));
        }
        let g = Gaussian2::new([f[1], f[2]], Cov2 { pp: f[3], pt: f[4], tt: f[6] })
            .map_err(|e| lines.err(e.to_string()))?;
        weights.push(f[0]);
        comps.push(g);
    }
    let t = lines.expect("threshold", 1)?;
    let mut model = GmmModel::new(weights, comps, standardizer).map_err(|e| lines.err(e.to_string()))?;
    if t[0] != "none" {
        let v: f64 = t[0].parse().map_err(|_| lines.err(format!("bad threshold `{}`", t[0])))?;
        model.set_threshold(v);
    }
    Ok(model)
}

impl GmmModel {
    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        write_model(&mut buf, self).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("model text is ASCII")
    }
}

impl std::str::FromStr for GmmModel {
    type Err = GmmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        read_model(s.as_bytes())
    }
}
