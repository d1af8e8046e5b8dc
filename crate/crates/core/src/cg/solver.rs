use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use super::{CgError, CsrMatrix};
use crate::layout::{CgShape, FlatMemory, Region, StructureId, StructureMap, WORD_BYTES};

/// Rows per block. Reductions are summed per block, then across blocks in
/// block order, so results do not depend on the number of threads.
pub const BLOCK_ROWS: usize = 1024;

/// The residual is recomputed from `b - A x` every this many iterations.
pub const RECOMPUTE_PERIOD: usize = 50;

pub const DEFAULT_TOL_FACTOR: f64 = 1e-8;
pub const DEFAULT_T_MAX: usize = 2000;

/// Receives every logical load and store the solver performs on the tracked
/// structures, as byte addresses in the flat address space.
pub trait AccessObserver {
    fn load(&mut self, addr: u64);
    fn store(&mut self, addr: u64);
}

/// Observer that records nothing. Used for native runs.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoObserver;

impl AccessObserver for NoObserver {
    #[inline(always)]
    fn load(&mut self, _addr: u64) {}
    #[inline(always)]
    fn store(&mut self, _addr: u64) {}
}

impl<O: AccessObserver + ?Sized> AccessObserver for &mut O {
    #[inline(always)]
    fn load(&mut self, addr: u64) {
        (**self).load(addr)
    }
    #[inline(always)]
    fn store(&mut self, addr: u64) {
        (**self).store(addr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub t_max: usize,
    /// Abort with [`CgError::DeadlineExceeded`] once this instant passes.
    /// Checked once per iteration.
    pub deadline: Option<Instant>,
    /// Worker threads for native runs. Ignored by [`CgProblem::solve`].
    pub threads: usize,
}

impl SolveOptions {
    pub fn new(tol: f64, t_max: usize) -> Self {
        Self {
            tol,
            t_max,
            deadline: None,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolveRecord {
    pub iterations: usize,
    pub converged: bool,
    pub final_residual_norm_sq: f64,
    pub verified: bool,
    /// Seconds spent in the solver loop.
    pub roi_wall_time: f64,
}

/// Scalars of the iteration, kept outside the injectable memory image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgScalars {
    pub eps: f64,
    pub eps_old: f64,
    pub alpha: f64,
    pub beta: f64,
    pub t: usize,
}

/// A CG problem laid out in a [`FlatMemory`] image.
///
/// All nine tracked structures live in the image, so tracing and fault
/// injection see the same storage the arithmetic uses.
pub struct CgProblem {
    map: StructureMap,
    memory: FlatMemory,
    n_rows: usize,
    nnz: usize,
}

#[derive(Clone, Copy)]
struct View<'a> {
    words: &'a [AtomicU64],
    base: u64,
}

impl<'a> View<'a> {
    fn new(memory: &'a FlatMemory, region: &Region) -> Self {
        Self {
            words: memory.region(region),
            base: region.base,
        }
    }

    #[inline(always)]
    fn raw<O: AccessObserver>(&self, i: usize, obs: &mut O) -> u64 {
        let w = self.words[i].load(Ordering::Relaxed);
        obs.load(self.base + i as u64 * WORD_BYTES);
        w
    }

    #[inline(always)]
    fn index<O: AccessObserver>(&self, i: usize, obs: &mut O) -> usize {
        self.raw(i, obs) as usize
    }

    #[inline(always)]
    fn get<O: AccessObserver>(&self, i: usize, obs: &mut O) -> f64 {
        f64::from_bits(self.raw(i, obs))
    }

    #[inline(always)]
    fn set<O: AccessObserver>(&self, i: usize, v: f64, obs: &mut O) {
        self.words[i].store(v.to_bits(), Ordering::Relaxed);
        obs.store(self.base + i as u64 * WORD_BYTES);
    }
}

struct Views<'a> {
    ar: View<'a>,
    ac: View<'a>,
    av: View<'a>,
    x: View<'a>,
    g: View<'a>,
    q: View<'a>,
    b: View<'a>,
    /// The two `d` buffers, indexed by storage region (D, DPrime).
    dbuf: [View<'a>; 2],
}

impl Views<'_> {
    /// `out[i] = (A v)[i]` for rows in `lo..hi`.
    #[inline(always)]
    fn row_product<O: AccessObserver>(&self, i: usize, v: View<'_>, obs: &mut O) -> f64 {
        let start = self.ar.index(i, obs);
        let end = self.ar.index(i + 1, obs);
        let mut sum = 0.0;
        for k in start..end {
            let c = self.ac.index(k, obs);
            let a = self.av.get(k, obs);
            sum += a * v.get(c, obs);
        }
        sum
    }
}

/// Runs per-block closures either sequentially with an observer or across
/// threads without one.
trait BlockExec {
    type Obs: AccessObserver;
    fn run(&mut self, n_blocks: usize, f: &(dyn Fn(usize, &mut Self::Obs) -> f64 + Sync)) -> Vec<f64>;
}

struct Sequential<'o, O: AccessObserver>(&'o mut O);

impl<O: AccessObserver> BlockExec for Sequential<'_, O> {
    type Obs = O;
    fn run(&mut self, n_blocks: usize, f: &(dyn Fn(usize, &mut O) -> f64 + Sync)) -> Vec<f64> {
        (0..n_blocks).map(|blk| f(blk, self.0)).collect()
    }
}

struct Threaded(usize);

impl BlockExec for Threaded {
    type Obs = NoObserver;
    fn run(&mut self, n_blocks: usize, f: &(dyn Fn(usize, &mut NoObserver) -> f64 + Sync)) -> Vec<f64> {
        let threads = self.0.clamp(1, n_blocks.max(1));
        if threads == 1 {
            return (0..n_blocks).map(|blk| f(blk, &mut NoObserver)).collect();
        }
        let mut out = vec![0.0; n_blocks];
        let per = n_blocks.div_ceil(threads);
        std::thread::scope(|s| {
            for (chunk_idx, chunk) in out.chunks_mut(per).enumerate() {
                s.spawn(move || {
                    for (j, slot) in chunk.iter_mut().enumerate() {
                        *slot = f(chunk_idx * per + j, &mut NoObserver);
                    }
                });
            }
        });
        out
    }
}

impl CgProblem {
    /// Lay out `a` and `b` in a fresh memory image. `x`, `g`, `d`, `d'` and `q`
    /// start at zero.
    pub fn new(a: &CsrMatrix, b: &[f64]) -> Result<Self, CgError> {
        if b.len() != a.n_rows {
            return Err(CgError::Dimension {
                expected: a.n_rows,
                got: b.len(),
            });
        }
        let shape = CgShape {
            n_rows: a.n_rows,
            nnz: a.nnz(),
        };
        let map = shape.structure_map();
        let memory = FlatMemory::zeroed(&map);
        let fill = |id: StructureId, data: &mut dyn Iterator<Item = u64>| {
            let region = map.get(id).expect("standard layout");
            for (w, v) in memory.region(region).iter().zip(data) {
                w.store(v, Ordering::Relaxed);
            }
        };
        fill(StructureId::Ar, &mut a.row_ptr.iter().copied());
        fill(StructureId::Ac, &mut a.col_idx.iter().copied());
        fill(StructureId::Av, &mut a.values.iter().map(|v| v.to_bits()));
        fill(StructureId::B, &mut b.iter().map(|v| v.to_bits()));
        Ok(Self {
            map,
            memory,
            n_rows: a.n_rows,
            nnz: a.nnz(),
        })
    }

    pub fn structure_map(&self) -> &StructureMap {
        &self.map
    }

    pub fn memory(&self) -> &FlatMemory {
        &self.memory
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn nnz(&self) -> usize {
        self.nnz
    }

    pub fn region(&self, id: StructureId) -> &Region {
        self.map.get(id).expect("standard layout registers every structure")
    }

    /// Current contents of a floating point vector.
    pub fn vector(&self, id: StructureId) -> Vec<f64> {
        self.memory
            .snapshot(self.region(id))
            .into_iter()
            .map(f64::from_bits)
            .collect()
    }

    pub fn solution(&self) -> Vec<f64> {
        self.vector(StructureId::X)
    }

    fn views(&self) -> Views<'_> {
        let v = |id| View::new(&self.memory, self.region(id));
        Views {
            ar: v(StructureId::Ar),
            ac: v(StructureId::Ac),
            av: v(StructureId::Av),
            x: v(StructureId::X),
            g: v(StructureId::G),
            q: v(StructureId::Q),
            b: v(StructureId::B),
            dbuf: [v(StructureId::D), v(StructureId::DPrime)],
        }
    }

    /// Single-threaded solve reporting every access to `observer`.
    pub fn solve<O: AccessObserver>(&self, opts: &SolveOptions, observer: &mut O) -> Result<SolveRecord, CgError> {
        self.run(opts, &mut Sequential(observer))
    }

    /// Native solve, split across `opts.threads` threads by row block.
    /// Bit-identical to [`CgProblem::solve`] for the same inputs.
    pub fn solve_native(&self, opts: &SolveOptions) -> Result<SolveRecord, CgError> {
        self.run(opts, &mut Threaded(opts.threads))
    }

    fn run<E: BlockExec>(&self, opts: &SolveOptions, exec: &mut E) -> Result<SolveRecord, CgError> {
        if !(opts.tol > 0.0) {
            return Err(CgError::InvalidTolerance(opts.tol));
        }
        let v = self.views();
        let n = self.n_rows;
        let n_blocks = n.div_ceil(BLOCK_ROWS);
        let rows = |blk: usize| blk * BLOCK_ROWS..((blk + 1) * BLOCK_ROWS).min(n);
        let sum = |parts: Vec<f64>| parts.into_iter().fold(0.0, |acc, p| acc + p);

        let started = Instant::now();
        let mut s = CgScalars {
            eps: 0.0,
            eps_old: f64::INFINITY,
            alpha: 0.0,
            beta: 0.0,
            t: 0,
        };
        // index into `dbuf` of the buffer currently playing `d`
        let mut cur = 0usize;
        let mut converged = false;

        while s.t < opts.t_max {
            if let Some(deadline) = opts.deadline {
                if Instant::now() >= deadline {
                    return Err(CgError::DeadlineExceeded { iterations: s.t });
                }
            }

            if s.t % RECOMPUTE_PERIOD == 0 {
                exec.run(n_blocks, &|blk, o| {
                    for i in rows(blk) {
                        let bi = v.b.get(i, o);
                        let ax = v.row_product(i, v.x, o);
                        v.g.set(i, bi - ax, o);
                    }
                    0.0
                });
            } else {
                let alpha = s.alpha;
                exec.run(n_blocks, &|blk, o| {
                    for i in rows(blk) {
                        let gi = v.g.get(i, o);
                        let qi = v.q.get(i, o);
                        v.g.set(i, gi - alpha * qi, o);
                    }
                    0.0
                });
            }

            s.eps = sum(exec.run(n_blocks, &|blk, o| {
                let mut acc = 0.0;
                for i in rows(blk) {
                    let gi = v.g.get(i, o);
                    acc += gi * gi;
                }
                acc
            }));
            if s.eps < opts.tol {
                converged = true;
                break;
            }

            s.beta = s.eps / s.eps_old;
            let (d, d_prev) = (v.dbuf[cur], v.dbuf[1 - cur]);
            let beta = s.beta;
            exec.run(n_blocks, &|blk, o| {
                for i in rows(blk) {
                    let dp = d_prev.get(i, o);
                    let gi = v.g.get(i, o);
                    d.set(i, beta * dp + gi, o);
                }
                0.0
            });

            exec.run(n_blocks, &|blk, o| {
                for i in rows(blk) {
                    let qi = v.row_product(i, d, o);
                    v.q.set(i, qi, o);
                }
                0.0
            });

            let qd = sum(exec.run(n_blocks, &|blk, o| {
                let mut acc = 0.0;
                for i in rows(blk) {
                    let qi = v.q.get(i, o);
                    let di = d.get(i, o);
                    acc += qi * di;
                }
                acc
            }));
            if qd == 0.0 {
                return Err(CgError::Breakdown { iteration: s.t });
            }
            s.alpha = s.eps / qd;

            let alpha = s.alpha;
            exec.run(n_blocks, &|blk, o| {
                for i in rows(blk) {
                    let xi = v.x.get(i, o);
                    let di = d.get(i, o);
                    v.x.set(i, xi + alpha * di, o);
                }
                0.0
            });

            s.eps_old = s.eps;
            cur = 1 - cur;
            s.t += 1;
        }

        Ok(SolveRecord {
            iterations: s.t,
            converged,
            final_residual_norm_sq: s.eps,
            verified: false,
            roi_wall_time: started.elapsed().as_secs_f64(),
        })
    }
}

/// Recompute `||b - A x||²` with pristine inputs and compare against `tol`.
pub fn verify(a: &CsrMatrix, b: &[f64], x: &[f64], tol: f64) -> bool {
    residual_norm_sq(a, b, x) < tol
}

pub fn residual_norm_sq(a: &CsrMatrix, b: &[f64], x: &[f64]) -> f64 {
    a.mul_vec(x).iter().zip(b).map(|(ax, bi)| (bi - ax) * (bi - ax)).sum()
}

pub fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// `tol_factor * ||b||²`.
pub fn relative_tol(b: &[f64], tol_factor: f64) -> f64 {
    tol_factor * norm_sq(b)
}

/// Right-hand side with the all-ones vector as exact solution.
pub fn ones_rhs(a: &CsrMatrix) -> Vec<f64> {
    a.mul_vec(&vec![1.0; a.n_rows])
}

impl SolveRecord {
    pub fn with_verification(mut self, verified: bool) -> Self {
        self.verified = verified && self.converged;
        self
    }

    pub fn roi_duration(&self) -> Duration {
        Duration::from_secs_f64(self.roi_wall_time)
    }
}
