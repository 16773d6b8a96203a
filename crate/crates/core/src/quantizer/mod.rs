//! Residual vector quantization of latent frames.

mod token_file;

pub use token_file::{read_token_file, write_token_file, TokenFile, TOKEN_FILE_VERSION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, shape_mismatch, Error, Result};
use crate::scalar::{sq_dist, Scalar};
use crate::tensor::{Shape, Tensor2};

/// `K` centroids of dimension `dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook<T> {
    dim: usize,
    centroids: Vec<T>,
}

impl<T: Scalar> Codebook<T> {
    pub fn new(dim: usize, centroids: Vec<T>) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || centroids.len() % dim != 0 {
            return Err(invalid(format!(
                "{} values do not form centroids of dim {dim}",
                centroids.len()
            )));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("codebook".into()));
        }
        Ok(Self { dim, centroids })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of entries `K`.
    pub fn len(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn centroid(&self, j: usize) -> &[T] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.centroids
    }

    /// Index of the nearest centroid and its squared distance. Ties go to
    /// the lowest index.
    pub fn nearest(&self, v: &[T]) -> (usize, T) {
        let mut best = (0, T::infinity());
        for (j, c) in self.centroids.chunks_exact(self.dim).enumerate() {
            let d = sq_dist(v, c);
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    }

    /// Sum of squared distances of `data` to their nearest centroids.
    pub fn inertia(&self, data: &[T]) -> T {
        data.chunks_exact(self.dim).map(|v| self.nearest(v).1).sum()
    }
}

fn check_vectors<T>(data: &[T], dim: usize) -> Result<usize> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(invalid(format!(
            "{} values do not form vectors of dim {dim}",
            data.len()
        )));
    }
    Ok(data.len() / dim)
}

/// Lloyd's algorithm with k-means++ seeding. `data` holds `n` row-major
/// vectors of length `dim`. Stops after `iters` rounds or once assignments
/// no longer change. Empty clusters are re-seeded from the point farthest
/// from its centroid. Data with fewer than `k` distinct vectors yields
/// duplicated centroids.
pub fn kmeans_train<T: Scalar>(
    data: &[T],
    dim: usize,
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<Codebook<T>> {
    let n = check_vectors(data, dim)?;
    if k == 0 {
        return Err(invalid("codebook size must be at least 1"));
    }
    if n < k {
        return Err(invalid(format!("{n} vectors cannot train {k} centroids")));
    }
    let point = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(point(first));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(point(i), point(first)).as_f64())
        .collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            // Every point already coincides with a centroid; the spare slots
            // duplicate the first one and never win a tie.
            centroids.extend_from_slice(point(first));
            continue;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
        }
        // Floating-point leftovers may land on a zero-weight tail.
        if d2[pick] == 0.0 {
            pick = d2.iter().rposition(|&w| w > 0.0).expect("total > 0");
        }
        let c = point(pick).to_vec();
        for (i, w) in d2.iter_mut().enumerate() {
            *w = w.min(sq_dist(point(i), &c).as_f64());
        }
        centroids.extend_from_slice(&c);
    }

    let mut book = Codebook { dim, centroids };
    let mut assign = vec![usize::MAX; n];
    for _ in 0..iters {
        let mut changed = false;
        let mut dist = vec![T::zero(); n];
        for i in 0..n {
            let (j, d) = book.nearest(point(i));
            if assign[i] != j {
                assign[i] = j;
                changed = true;
            }
            dist[i] = d;
        }
        if !changed {
            break;
        }
        let mut sums = vec![T::zero(); k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let j = assign[i];
            counts[j] += 1;
            for (s, &v) in sums[j * dim..(j + 1) * dim].iter_mut().zip(point(i)) {
                *s += v;
            }
        }
        let mut taken = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                let c = T::of_usize(counts[j]);
                for (dst, &s) in book.centroids[j * dim..(j + 1) * dim]
                    .iter_mut()
                    .zip(&sums[j * dim..(j + 1) * dim])
                {
                    *dst = s / c;
                }
            } else {
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .fold(None::<usize>, |best, i| match best {
                        Some(b) if dist[b] >= dist[i] => Some(b),
                        _ => Some(i),
                    })
                    .expect("n >= k leaves a free point");
                taken[far] = true;
                dist[far] = T::zero();
                book.centroids[j * dim..(j + 1) * dim].copy_from_slice(point(far));
            }
        }
    }
    Ok(book)
}

/// Ordered quantizer stages; stage `i` quantizes the residual left by
/// stages `0..i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rvq<T> {
    stages: Vec<Codebook<T>>,
}

impl<T: Scalar> Rvq<T> {
    pub fn new(stages: Vec<Codebook<T>>) -> Result<Self> {
        let dim = stages
            .first()
            .ok_or_else(|| invalid("a residual quantizer needs at least one stage"))?
            .dim();
        if stages.iter().any(|s| s.dim() != dim) {
            return Err(invalid("all quantizer stages must share one dimension"));
        }
        Ok(Self { stages })
    }

    pub fn stages(&self) -> &[Codebook<T>] {
        &self.stages
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn dim(&self) -> usize {
        self.stages[0].dim()
    }

    /// Keeps only the first `n` stages.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.stages.len() {
            return Err(invalid(format!(
                "cannot keep {n} of {} stages",
                self.stages.len()
            )));
        }
        Self::new(self.stages[..n].to_vec())
    }

    /// Bits per frame: `sum over stages of ceil(log2 K)`.
    pub fn bits_per_frame(&self) -> u32 {
        self.stages.iter().map(|s| bits_for(s.len())).sum()
    }

    /// Mean squared residual after each prefix of stages, starting with the
    /// raw data energy (zero stages).
    pub fn residual_energies(&self, data: &[T]) -> Result<Vec<f64>> {
        let n = check_vectors(data, self.dim())?;
        let mut residual = data.to_vec();
        let energy =
            |r: &[T]| r.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / n.max(1) as f64;
        let mut out = vec![energy(&residual)];
        for stage in &self.stages {
            for v in residual.chunks_exact_mut(self.dim()) {
                let (j, _) = stage.nearest(v);
                for (r, &c) in v.iter_mut().zip(stage.centroid(j)) {
                    *r -= c;
                }
            }
            out.push(energy(&residual));
        }
        Ok(out)
    }
}

/// `ceil(log2 k)`.
pub fn bits_for(k: usize) -> u32 {
    if k <= 1 {
        0
    } else {
        usize::BITS - (k - 1).leading_zeros()
    }
}

/// Trains `stages` codebooks of `k` entries each, stage `i` on the
/// residuals after stages `0..i`.
pub fn rvq_train<T: Scalar>(
    data: &[T],
    dim: usize,
    stages: usize,
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<Rvq<T>> {
    if stages == 0 {
        return Err(invalid("a residual quantizer needs at least one stage"));
    }
    check_vectors(data, dim)?;
    let mut residual = data.to_vec();
    let mut books = Vec::with_capacity(stages);
    for s in 0..stages {
        let book = kmeans_train(&residual, dim, k, iters, seed.wrapping_add(s as u64))?;
        for v in residual.chunks_exact_mut(dim) {
            let (j, _) = book.nearest(v);
            for (r, &c) in v.iter_mut().zip(book.centroid(j)) {
                *r -= c;
            }
        }
        books.push(book);
    }
    Rvq::new(books)
}

/// Per-frame code indices, `stages × frames`, stage-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    stages: usize,
    frames: usize,
    codebook_sizes: Vec<usize>,
    indices: Vec<u32>,
}

impl TokenSequence {
    pub fn new(codebook_sizes: Vec<usize>, frames: usize, indices: Vec<u32>) -> Result<Self> {
        let stages = codebook_sizes.len();
        if indices.len() != stages * frames {
            return Err(shape_mismatch(
                format!("{} tokens", stages * frames),
                indices.len(),
            ));
        }
        for (s, &k) in codebook_sizes.iter().enumerate() {
            if let Some(&ix) = indices[s * frames..(s + 1) * frames]
                .iter()
                .find(|&&ix| ix as usize >= k)
            {
                return Err(Error::OutOfRange {
                    what: "token",
                    index: ix as usize,
                    len: k,
                });
            }
        }
        Ok(Self {
            stages,
            frames,
            codebook_sizes,
            indices,
        })
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn codebook_sizes(&self) -> &[usize] {
        &self.codebook_sizes
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn get(&self, stage: usize, frame: usize) -> u32 {
        self.indices[stage * self.frames + frame]
    }

    pub fn stage(&self, stage: usize) -> &[u32] {
        &self.indices[stage * self.frames..(stage + 1) * self.frames]
    }
}

/// Quantizes each frame (column) of `z` stage by stage.
pub fn rvq_encode<T: Scalar>(q: &Rvq<T>, z: &Tensor2<T>) -> Result<TokenSequence> {
    if z.channels() != q.dim() {
        return Err(shape_mismatch(
            format!("{} latent channels", q.dim()),
            z.channels(),
        ));
    }
    let frames = z.frames();
    let mut indices = vec![0u32; q.num_stages() * frames];
    for f in 0..frames {
        let mut residual = z.column(f);
        for (s, stage) in q.stages().iter().enumerate() {
            let (j, _) = stage.nearest(&residual);
            indices[s * frames + f] = j as u32;
            for (r, &c) in residual.iter_mut().zip(stage.centroid(j)) {
                *r -= c;
            }
        }
    }
    Ok(TokenSequence {
        stages: q.num_stages(),
        frames,
        codebook_sizes: q.stages().iter().map(Codebook::len).collect(),
        indices,
    })
}

/// Sum of the selected centroids of every stage, per frame.
pub fn rvq_decode<T: Scalar>(q: &Rvq<T>, tokens: &TokenSequence) -> Result<Tensor2<T>> {
    rvq_decode_stages(q, tokens, tokens.stages())
}

/// Decodes using only the first `n` stages.
pub fn rvq_decode_stages<T: Scalar>(
    q: &Rvq<T>,
    tokens: &TokenSequence,
    n: usize,
) -> Result<Tensor2<T>> {
    if tokens.stages() != q.num_stages() {
        return Err(shape_mismatch(
            format!("{} token stages", q.num_stages()),
            tokens.stages(),
        ));
    }
    if n > tokens.stages() {
        return Err(invalid(format!(
            "cannot decode {n} of {} stages",
            tokens.stages()
        )));
    }
    let mut out = Tensor2::zeros(Shape::new(q.dim(), tokens.frames()));
    for (s, stage) in q.stages().iter().enumerate().take(n) {
        for f in 0..tokens.frames() {
            let j = tokens.get(s, f) as usize;
            if j >= stage.len() {
                return Err(Error::OutOfRange {
                    what: "token",
                    index: j,
                    len: stage.len(),
                });
            }
            for (c, &v) in stage.centroid(j).iter().enumerate() {
                out.set(c, f, out.get(c, f) + v);
            }
        }
    }
    Ok(out)
}

/// Transmission rate in bits per second: `frame_rate * bits_per_frame`.
pub fn bitrate<T: Scalar>(q: &Rvq<T>, frame_rate_hz: f64) -> f64 {
    frame_rate_hz * f64::from(q.bits_per_frame())
}
