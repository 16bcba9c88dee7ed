//! Transaction meshes and simulated price-path ensembles.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeshKind {
    Uniform,
    Geometric { delta: f64 },
    /// Arbitrary increasing times, e.g. read from a file or coarsened.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub kind: MeshKind,
    pub times: Vec<f64>,
}

impl Mesh {
    pub fn uniform(t0: f64, t_end: f64, k: usize) -> Result<Mesh> {
        check_span(t0, t_end)?;
        if k == 0 {
            return Err(invalid("uniform mesh needs at least one interval"));
        }
        let span = t_end - t0;
        let mut times: Vec<f64> = (0..=k).map(|j| t0 + span * (j as f64 / k as f64)).collect();
        times[k] = t_end;
        Mesh::checked(MeshKind::Uniform, times)
    }

    /// Geometric mesh `t_j = t_{j-1} (1 + delta)`; the last interval is
    /// shortened so the mesh ends exactly at `t_end`.
    pub fn geometric(t0: f64, t_end: f64, delta: f64) -> Result<Mesh> {
        check_span(t0, t_end)?;
        if !(t0 > 0.0) {
            return Err(invalid("geometric mesh needs t0 > 0"));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(invalid(format!("geometric mesh needs delta > 0, got {delta}")));
        }
        if t0 * (1.0 + delta) >= t_end {
            return Err(invalid(format!(
                "delta = {delta} leaves no interior point between {t0} and {t_end}"
            )));
        }
        let mut times = vec![t0];
        let mut t = t0;
        loop {
            t *= 1.0 + delta;
            // A sliver interval from rounding would only add noise.
            if t >= t_end * (1.0 - 1e-12) {
                break;
            }
            times.push(t);
        }
        times.push(t_end);
        Mesh::checked(MeshKind::Geometric { delta }, times)
    }

    pub fn from_times(times: Vec<f64>) -> Result<Mesh> {
        Mesh::checked(MeshKind::Custom, times)
    }

    fn checked(kind: MeshKind, times: Vec<f64>) -> Result<Mesh> {
        if times.len() < 2 {
            return Err(invalid("a mesh needs at least two times"));
        }
        if !times.iter().all(|t| t.is_finite()) {
            return Err(invalid("mesh times must be finite"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("mesh times must be strictly increasing"));
        }
        Ok(Mesh { kind, times })
    }

    /// Number of intervals k_n.
    pub fn k(&self) -> usize {
        self.times.len() - 1
    }

    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        self.times[self.k()]
    }

    pub fn span(&self) -> f64 {
        self.t_end() - self.t0()
    }

    /// Largest spacing (the mesh size).
    pub fn mesh_size(&self) -> f64 {
        self.times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Keeps every `factor`-th time plus the final one.
    pub fn coarsen(&self, factor: usize) -> Result<Mesh> {
        let idx = coarse_indices(self.k(), factor)?;
        let times = idx.iter().map(|&j| self.times[j]).collect();
        let kind = match self.kind {
            MeshKind::Uniform if self.k() % factor == 0 => MeshKind::Uniform,
            _ => MeshKind::Custom,
        };
        Mesh::checked(kind, times)
    }
}

fn check_span(t0: f64, t_end: f64) -> Result<()> {
    if !(t0.is_finite() && t_end.is_finite() && t_end > t0) {
        return Err(invalid(format!("need T > t0, got t0={t0}, T={t_end}")));
    }
    Ok(())
}

fn coarse_indices(k: usize, factor: usize) -> Result<Vec<usize>> {
    if factor == 0 {
        return Err(invalid("coarsening factor must be >= 1"));
    }
    let mut idx: Vec<usize> = (0..=k).step_by(factor).collect();
    if *idx.last().unwrap() != k {
        idx.push(k);
    }
    Ok(idx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpSize {
    pub log_jump: f64,
    pub prob: f64,
}

/// Generator descriptor stored alongside an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelTag {
    Gbm {
        s0: f64,
        mu: f64,
        sigma: f64,
    },
    JumpDiffusion {
        s0: f64,
        mu: f64,
        sigma: f64,
        jump_intensity: f64,
        jump_sizes: Vec<JumpSize>,
    },
    Ingested,
}

impl ModelTag {
    /// Diffusion volatility when the generator is known to be a pure GBM.
    pub fn gbm_sigma(&self) -> Option<f64> {
        match self {
            ModelTag::Gbm { sigma, .. } => Some(*sigma),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub mesh: Mesh,
    /// `n_paths x (k+1)`, row-major; row i is path i.
    pub prices: Array2<f64>,
    pub seed: u64,
    pub model: ModelTag,
}

impl PathEnsemble {
    pub fn new(mesh: Mesh, prices: Array2<f64>, seed: u64, model: ModelTag) -> Result<Self> {
        if prices.ncols() != mesh.times.len() {
            return Err(Error::InvalidInput(format!(
                "{} price columns for {} mesh times",
                prices.ncols(),
                mesh.times.len()
            )));
        }
        if prices.nrows() == 0 {
            return Err(Error::InvalidInput("ensemble has no paths".into()));
        }
        if let Some(bad) = prices.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "prices must be finite and strictly positive, found {bad}"
            )));
        }
        let prices = prices.as_standard_layout().into_owned();
        Ok(PathEnsemble {
            mesh,
            prices,
            seed,
            model,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.prices.nrows()
    }

    pub fn k(&self) -> usize {
        self.mesh.k()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.prices.ncols();
        &self.prices.as_slice().expect("standard layout")[i * w..(i + 1) * w]
    }

    /// Sub-ensemble on the coarsened mesh (same paths, fewer columns).
    pub fn coarsen(&self, factor: usize) -> Result<PathEnsemble> {
        let idx = coarse_indices(self.k(), factor)?;
        let mesh = self.mesh.coarsen(factor)?;
        let prices = self.prices.select(ndarray::Axis(1), &idx).as_standard_layout().into_owned();
        Ok(PathEnsemble {
            mesh,
            prices,
            seed: self.seed,
            model: self.model.clone(),
        })
    }

    /// Keeps paths `range` (used for held-out splits).
    pub fn slice_paths(&self, range: std::ops::Range<usize>) -> Result<PathEnsemble> {
        if range.is_empty() || range.end > self.n_paths() {
            return Err(invalid("path range out of bounds"));
        }
        let prices = self.prices.slice(ndarray::s![range, ..]).to_owned();
        Ok(PathEnsemble {
            mesh: self.mesh.clone(),
            prices,
            seed: self.seed,
            model: self.model.clone(),
        })
    }
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

fn check_diffusion(s0: f64, mu: f64, sigma: f64, n_paths: usize) -> Result<()> {
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(invalid(format!("s0 must be positive, got {s0}")));
    }
    if !mu.is_finite() {
        return Err(invalid("mu must be finite"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    if n_paths == 0 {
        return Err(invalid("n_paths must be >= 1"));
    }
    Ok(())
}

pub fn gen_gbm(
    s0: f64,
    mu: f64,
    sigma: f64,
    mesh: &Mesh,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    check_diffusion(s0, mu, sigma, n_paths)?;
    let prices = simulate(s0, mu, sigma, None, mesh, n_paths, seed)?;
    PathEnsemble::new(mesh.clone(), prices, seed, ModelTag::Gbm { s0, mu, sigma })
}

/// GBM skeleton times `exp` of a compound-Poisson sum of log-jumps. The jumps
/// are not compensated, so `mu` is the drift of the diffusion part only.
#[allow(clippy::too_many_arguments)]
pub fn gen_jump_diffusion(
    s0: f64,
    mu: f64,
    sigma: f64,
    jump_intensity: f64,
    jump_sizes: &[JumpSize],
    mesh: &Mesh,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    check_diffusion(s0, mu, sigma, n_paths)?;
    if !(jump_intensity >= 0.0 && jump_intensity.is_finite()) {
        return Err(invalid(format!("jump intensity must be >= 0, got {jump_intensity}")));
    }
    if jump_sizes.is_empty() {
        return Err(invalid("jump size list is empty"));
    }
    if jump_sizes
        .iter()
        .any(|j| !(j.prob >= 0.0) || !j.log_jump.is_finite())
    {
        return Err(invalid("jump probabilities must be >= 0 and sizes finite"));
    }
    let total: f64 = jump_sizes.iter().map(|j| j.prob).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("jump probabilities sum to {total}, not 1")));
    }
    let jumps = JumpSpec {
        intensity: jump_intensity,
        sizes: jump_sizes,
    };
    let prices = simulate(s0, mu, sigma, Some(&jumps), mesh, n_paths, seed)?;
    let model = ModelTag::JumpDiffusion {
        s0,
        mu,
        sigma,
        jump_intensity,
        jump_sizes: jump_sizes.to_vec(),
    };
    PathEnsemble::new(mesh.clone(), prices, seed, model)
}

struct JumpSpec<'a> {
    intensity: f64,
    sizes: &'a [JumpSize],
}

impl JumpSpec<'_> {
    fn draw_size<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        for s in self.sizes {
            cum += s.prob;
            if u < cum {
                return s.log_jump;
            }
        }
        self.sizes.last().unwrap().log_jump
    }
}

fn simulate(
    s0: f64,
    mu: f64,
    sigma: f64,
    jumps: Option<&JumpSpec>,
    mesh: &Mesh,
    n_paths: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    let t = &mesh.times;
    let w = t.len();
    let drift = mu - 0.5 * sigma * sigma;
    let sqrt_dt: Vec<f64> = t.windows(2).map(|p| (p[1] - p[0]).sqrt()).collect();
    let mut data = vec![0.0; n_paths * w];
    data.par_chunks_mut(w).enumerate().for_each(|(i, row)| {
        let mut rng = path_rng(seed, i);
        let mut bm = 0.0;
        let mut jump_log = 0.0;
        row[0] = s0;
        for j in 1..w {
            let z: f64 = rng.sample(StandardNormal);
            bm += sqrt_dt[j - 1] * z;
            let diffusion = (drift * (t[j] - t[0]) + sigma * bm).exp();
            row[j] = match jumps {
                Some(js) if js.intensity > 0.0 => {
                    let rate = js.intensity * (t[j] - t[j - 1]);
                    let count = Poisson::new(rate).map(|d| d.sample(&mut rng)).unwrap_or(0.0);
                    for _ in 0..count as u64 {
                        jump_log += js.draw_size(&mut rng);
                    }
                    s0 * diffusion * jump_log.exp()
                }
                _ => s0 * diffusion,
            };
        }
    });
    if let Some(bad) = data.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
        return Err(invalid(format!(
            "generator produced a non-representable price ({bad}); reduce the horizon, drift or volatility"
        )));
    }
    Ok(Array2::from_shape_vec((n_paths, w), data).expect("shape"))
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    seed: u64,
    mesh_kind: MeshKind,
    #[serde(flatten)]
    model: ModelTag,
}

const CSV_TAG: &str = "# riskneutral-ensemble ";
const BIN_MAGIC: &[u8; 8] = b"RNENSEM\x01";

/// Writes the ensemble as CSV: a `#` metadata line, a header row of mesh
/// times, then one path per row. Floats use the shortest exact representation.
pub fn write_csv(ens: &PathEnsemble, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let meta = Metadata {
        seed: ens.seed,
        mesh_kind: ens.mesh.kind,
        model: ens.model.clone(),
    };
    let io = |e| Error::io(path, e);
    writeln!(out, "{CSV_TAG}{}", serde_json::to_string(&meta)?).map_err(io)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ens.mesh.times.iter().map(|t| t.to_string()))?;
    for i in 0..ens.n_paths() {
        w.write_record(ens.row(i).iter().map(|p| p.to_string()))?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// Reads an ensemble CSV. The metadata line is optional, so plain
/// `time`-header files from elsewhere are accepted as ingested data.
pub fn read_csv(path: &Path) -> Result<PathEnsemble> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
    if first.trim().is_empty() {
        return Err(Error::InvalidInput(format!("{} is empty", path.display())));
    }
    let (meta, header_line) = match first.strip_prefix(CSV_TAG) {
        Some(json) => (Some(serde_json::from_str::<Metadata>(json.trim())?), None),
        None => (None, Some(first)),
    };
    let rest: Box<dyn Read> = match header_line {
        Some(h) => Box::new(std::io::Cursor::new(h.into_bytes()).chain(reader)),
        None => Box::new(reader),
    };
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(rest);
    let times = r
        .headers()?
        .iter()
        .map(|s| parse_f64(s, "time"))
        .collect::<Result<Vec<_>>>()?;
    if times.is_empty() {
        return Err(Error::InvalidInput("missing time header row".into()));
    }
    let w = times.len();
    let mut data = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        for s in rec.iter() {
            data.push(parse_f64(s, "price")?);
        }
    }
    let n = data.len() / w;
    if n == 0 {
        return Err(Error::InvalidInput(format!("{} has no price rows", path.display())));
    }
    let prices = Array2::from_shape_vec((n, w), data)
        .map_err(|e| Error::InvalidInput(format!("ragged price rows: {e}")))?;
    let mesh = Mesh::from_times(times).map_err(|e| Error::InvalidInput(e.to_string()))?;
    build_from_meta(mesh, prices, meta)
}

fn build_from_meta(mut mesh: Mesh, prices: Array2<f64>, meta: Option<Metadata>) -> Result<PathEnsemble> {
    match meta {
        Some(m) => {
            mesh.kind = m.mesh_kind;
            PathEnsemble::new(mesh, prices, m.seed, m.model)
        }
        None => PathEnsemble::new(mesh, prices, 0, ModelTag::Ingested),
    }
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidInput(format!("cannot parse {what} value {s:?}")))
}

/// Binary cache: magic, JSON parameter block, dimensions, mesh times and
/// prices as little-endian f64.
pub fn write_binary(ens: &PathEnsemble, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let meta = serde_json::to_vec(&Metadata {
        seed: ens.seed,
        mesh_kind: ens.mesh.kind,
        model: ens.model.clone(),
    })?;
    let mut buf = Vec::with_capacity(32 + meta.len());
    buf.extend_from_slice(BIN_MAGIC);
    buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta);
    buf.extend_from_slice(&(ens.n_paths() as u64).to_le_bytes());
    buf.extend_from_slice(&(ens.mesh.times.len() as u64).to_le_bytes());
    let io = |e| Error::io(path, e);
    out.write_all(&buf).map_err(io)?;
    for t in &ens.mesh.times {
        out.write_all(&t.to_le_bytes()).map_err(io)?;
    }
    for p in ens.prices.as_slice().expect("standard layout") {
        out.write_all(&p.to_le_bytes()).map_err(io)?;
    }
    out.flush().map_err(io)?;
    Ok(())
}

pub fn read_binary(path: &Path) -> Result<PathEnsemble> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |what: &str| Error::InvalidInput(format!("{}: {what}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != BIN_MAGIC {
        return Err(bad("not an ensemble cache (bad magic)"));
    }
    let mut pos = 8;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated file"))?;
        pos += n;
        Ok(s)
    };
    let u64_at = |s: &[u8]| u64::from_le_bytes(s.try_into().unwrap()) as usize;
    let meta_len = u64_at(take(8)?);
    let meta: Metadata = serde_json::from_slice(take(meta_len)?)?;
    let n = u64_at(take(8)?);
    let w = u64_at(take(8)?);
    let total = n.checked_mul(w).ok_or_else(|| bad("dimension overflow"))?;
    let read_f64s = |s: &[u8]| -> Vec<f64> {
        s.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let times = read_f64s(take(w * 8)?);
    let data = read_f64s(take(total * 8)?);
    let mesh = Mesh::from_times(times).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let prices = Array2::from_shape_vec((n, w), data).map_err(|e| bad(&e.to_string()))?;
    build_from_meta(mesh, prices, Some(meta))
}

/// Reads CSV or binary depending on the file's first bytes.
pub fn read_ensemble(path: &Path) -> Result<PathEnsemble> {
    let mut head = [0u8; 8];
    let n = File::open(path)
        .and_then(|mut f| f.read(&mut head))
        .map_err(|e| Error::io(path, e))?;
    if n == 8 && &head == BIN_MAGIC {
        read_binary(path)
    } else {
        read_csv(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_mesh_quarter() {
        let m = Mesh::uniform(0.0, 1.0, 4).unwrap();
        assert_eq!(m.times, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(m.mesh_size(), 0.25);
        assert_eq!(Mesh::uniform(0.0, 1.0, 1).unwrap().times, vec![0.0, 1.0]);
    }

    #[test]
    fn geometric_mesh_recurrence() {
        let m = Mesh::geometric(1.0, 2.0, 0.1).unwrap();
        // 1.1^7 = 1.9487171 < 2 < 1.1^8, so seven interior points and a short last interval.
        let expected = [1.0, 1.1, 1.21, 1.331, 1.4641, 1.61051, 1.771561, 1.9487171, 2.0];
        assert_eq!(m.times.len(), expected.len());
        for (a, b) in m.times.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
        for j in 1..m.k() {
            let spacing = m.times[j] - m.times[j - 1];
            assert!((spacing - 0.1 * m.times[j - 1]).abs() < 1e-14);
        }
        assert!(m.times[8] - m.times[7] < 0.1 * m.times[7]);
    }

    #[test]
    fn mesh_rejections() {
        assert!(Mesh::uniform(1.0, 1.0, 4).is_err());
        assert!(Mesh::uniform(0.0, 1.0, 0).is_err());
        assert!(Mesh::geometric(1.0, 2.0, 1.5).is_err());
        assert!(Mesh::geometric(0.0, 2.0, 0.1).is_err());
        assert!(Mesh::geometric(1.0, 2.0, -0.1).is_err());
        assert!(Mesh::from_times(vec![0.0, 0.5, 0.5, 1.0]).is_err());
    }

    #[test]
    fn doubling_k_halves_mesh_size() {
        for k in [1usize, 3, 16, 100] {
            let a = Mesh::uniform(0.0, 2.0, k).unwrap().mesh_size();
            let b = Mesh::uniform(0.0, 2.0, 2 * k).unwrap().mesh_size();
            assert!((a - 2.0 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn coarsen_keeps_endpoints() {
        let m = Mesh::uniform(0.0, 1.0, 10).unwrap();
        let c = m.coarsen(4).unwrap();
        assert_eq!(c.times, vec![0.0, 0.4, 0.8, 1.0]);
        assert_eq!(c.kind, MeshKind::Custom);
        assert_eq!(m.coarsen(5).unwrap().kind, MeshKind::Uniform);
    }

    #[test]
    fn zero_volatility_is_deterministic_growth() {
        let mesh = Mesh::uniform(0.0, 1.0, 8).unwrap();
        let ens = gen_gbm(1.0, 0.1, 0.0, &mesh, 5, 3).unwrap();
        for i in 0..5 {
            for (j, t) in mesh.times.iter().enumerate() {
                assert_eq!(ens.prices[[i, j]], (0.1 * t).exp());
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let mesh = Mesh::uniform(0.0, 1.0, 4).unwrap();
        assert!(gen_gbm(0.0, 0.1, 0.2, &mesh, 5, 1).is_err());
        assert!(gen_gbm(1.0, 0.1, -0.2, &mesh, 5, 1).is_err());
        assert!(gen_gbm(1.0, 0.1, 0.2, &mesh, 0, 1).is_err());
        let j = [JumpSize { log_jump: -0.1, prob: 0.5 }];
        assert!(gen_jump_diffusion(1.0, 0.0, 0.2, 1.0, &j, &mesh, 5, 1).is_err());
        assert!(gen_jump_diffusion(1.0, 0.0, 0.2, 1.0, &[], &mesh, 5, 1).is_err());
        // exp(1e4) is not representable
        assert!(gen_gbm(1.0, 1e4, 0.0, &mesh, 2, 1).is_err());
    }
}
