//! C ABI over `lma-core`.
//!
//! Every function returns an [`LmaStatus`]. On failure the message is kept
//! per thread and read with [`lma_last_error_message`]. Handles are opaque
//! and owned by the caller, who releases them with the matching `_free`.
//! Field arrays hold `nx·ny` values in row-major order, index `j·nx + i`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use lma_core::convex::{build_potential, ConvexPotential};
use lma_core::error::LmaError;
use lma_core::families::PotentialFamily;
use lma_core::grid::{Grid, GridFunction2D};
use lma_core::harness::{harnack_ratio, holder_scan, run_pipeline, ExperimentConfig};
use lma_core::plegendre::Forcing;
use lma_core::solver::{direct_vs_transformed, solve, EllipticProblem, SolveOptions};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    NotConvex = 5,
    DetOutOfBounds = 6,
    Section = 7,
    Transform = 8,
    Solver = 9,
    Estimate = 10,
    Config = 11,
    Panic = 12,
}

/// Uniform grid on a rectangle.
pub struct LmaGrid {
    grid: Grid,
}

/// Validated convex potential sampled on a grid.
pub struct LmaPotential {
    p: ConvexPotential,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &LmaError) -> LmaStatus {
    use LmaError::*;
    match e {
        InvalidGrid(_) | InvalidArgument(_) | BetaNotAboveOne(_) => LmaStatus::InvalidArgument,
        Parse { .. } | Csv(_) => LmaStatus::Parse,
        Io { .. } => LmaStatus::Io,
        NonConvex { .. } | NotSpd { .. } => LmaStatus::NotConvex,
        DetOutOfBounds { .. } => LmaStatus::DetOutOfBounds,
        EmptySection { .. } | SectionNotInterior { .. } => LmaStatus::Section,
        NotMonotone { .. } | DegenerateImage { .. } | OutsideImage { .. } | EllipticityViolated { .. } => {
            LmaStatus::Transform
        }
        SingularSystem(_) | NoConvergence { .. } => LmaStatus::Solver,
        DegenerateDenominator { .. } | ZeroEnergy | NonPositiveSolution { .. } | FitIllConditioned(_) => {
            LmaStatus::Estimate
        }
        Config(_) => LmaStatus::Config,
        Stage { source, .. } => status_of(source),
    }
}

enum Failure {
    Null(&'static str),
    Core(LmaError),
}

impl From<LmaError> for Failure {
    fn from(e: LmaError) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LmaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LmaStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            LmaStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            LmaStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn c_str<'a>(s: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure::Core(LmaError::InvalidArgument(format!("{what} is not UTF-8"))))
}

/// A field of `grid.len()` values, or `None` for a null pointer.
unsafe fn field(grid: Grid, mask: &[bool], p: *const f64, len: usize, what: &str) -> Result<Option<GridFunction2D>, Failure> {
    if p.is_null() {
        return Ok(None);
    }
    if len != grid.len() {
        return Err(LmaError::InvalidArgument(format!("{what} has {len} values, grid has {}", grid.len())).into());
    }
    let v = std::slice::from_raw_parts(p, len).to_vec();
    Ok(Some(GridFunction2D::new(grid, v, mask.to_vec())?))
}

unsafe fn field_or_zero(grid: Grid, mask: &[bool], p: *const f64, len: usize, what: &str) -> Result<GridFunction2D, Failure> {
    Ok(field(grid, mask, p, len, what)?.unwrap_or_else(|| GridFunction2D::zeros(grid, mask.to_vec())))
}

unsafe fn write_out(dst: *mut f64, len: usize, u: &GridFunction2D) -> Result<(), Failure> {
    if dst.is_null() {
        return Err(Failure::Null("u_out"));
    }
    if len != u.values.len() {
        return Err(LmaError::InvalidArgument(format!("u_out has {len} slots, grid has {}", u.values.len())).into());
    }
    let d = std::slice::from_raw_parts_mut(dst, len);
    for (k, v) in d.iter_mut().enumerate() {
        *v = if u.mask[k] { u.values[k] } else { f64::NAN };
    }
    Ok(())
}

/// Copies the last error of this thread into `buf` (NUL terminated,
/// truncated to `len`) and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lma_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            std::ptr::copy_nonoverlapping(e.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn lma_status_name(s: LmaStatus) -> *const c_char {
    let n: &'static [u8] = match s {
        LmaStatus::Ok => b"ok\0",
        LmaStatus::NullPointer => b"null pointer\0",
        LmaStatus::InvalidArgument => b"invalid argument\0",
        LmaStatus::Io => b"io\0",
        LmaStatus::Parse => b"parse\0",
        LmaStatus::NotConvex => b"not convex\0",
        LmaStatus::DetOutOfBounds => b"det out of bounds\0",
        LmaStatus::Section => b"section\0",
        LmaStatus::Transform => b"transform\0",
        LmaStatus::Solver => b"solver\0",
        LmaStatus::Estimate => b"estimate\0",
        LmaStatus::Config => b"config\0",
        LmaStatus::Panic => b"panic\0",
    };
    n.as_ptr() as *const c_char
}

/// `n × n` grid on `[lo, hi]²`.
///
/// # Safety
/// `grid_out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn lma_grid_new_square(n: usize, lo: f64, hi: f64, grid_out: *mut *mut LmaGrid) -> LmaStatus {
    guard(|| {
        let o = out(grid_out, "grid_out")?;
        let grid = Grid::square(n, lo, hi)?;
        *o = Box::into_raw(Box::new(LmaGrid { grid }));
        Ok(())
    })
}

/// # Safety
/// `grid` must be null or come from `lma_grid_new_square` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn lma_grid_free(grid: *mut LmaGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Number of nodes, `nx·ny`; 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lma_grid_len(grid: *const LmaGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.grid.len())
}

/// Potential from a family spec such as `identity`, `skew:0.5` or
/// `diagonal:2,0.5`, validated against the family's own bounds.
///
/// # Safety
/// `spec` must be null or NUL terminated; `grid` null or live; `potential_out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn lma_potential_from_family(
    spec: *const c_char,
    grid: *const LmaGrid,
    potential_out: *mut *mut LmaPotential,
) -> LmaStatus {
    guard(|| {
        let spec = c_str(spec, "spec")?;
        let g = deref(grid, "grid")?;
        let o = out(potential_out, "potential_out")?;
        let p = PotentialFamily::parse(spec)?.build(g.grid)?;
        *o = Box::into_raw(Box::new(LmaPotential { p }));
        Ok(())
    })
}

/// Potential from sampled values with `det D²φ ∈ [lambda, big_lambda]`.
///
/// # Safety
/// `values` must hold `len` readable doubles; pointers as for `lma_potential_from_family`.
#[no_mangle]
pub unsafe extern "C" fn lma_potential_from_values(
    grid: *const LmaGrid,
    values: *const f64,
    len: usize,
    lambda: f64,
    big_lambda: f64,
    potential_out: *mut *mut LmaPotential,
) -> LmaStatus {
    guard(|| {
        let g = deref(grid, "grid")?.grid;
        let o = out(potential_out, "potential_out")?;
        let mask = GridFunction2D::full_mask(&g);
        let phi = field(g, &mask, values, len, "values")?.ok_or(Failure::Null("values"))?;
        let p = build_potential(phi, lambda, big_lambda)?;
        *o = Box::into_raw(Box::new(LmaPotential { p }));
        Ok(())
    })
}

/// # Safety
/// `potential` must be null or a live handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn lma_potential_free(potential: *mut LmaPotential) {
    if !potential.is_null() {
        drop(Box::from_raw(potential));
    }
}

/// Measured range of `det D²φ` over the validated nodes.
///
/// # Safety
/// `potential` null or live; `lo`, `hi` null or writable.
#[no_mangle]
pub unsafe extern "C" fn lma_potential_det_range(potential: *const LmaPotential, lo: *mut f64, hi: *mut f64) -> LmaStatus {
    guard(|| {
        let p = deref(potential, "potential")?;
        let (a, b) = p.p.det_range();
        *out(lo, "lo")? = a;
        *out(hi, "hi")? = b;
        Ok(())
    })
}

/// Solves `D_j(Φ^{ij}D_iu) = div F + f` with Dirichlet data `boundary`.
/// Null `flux1`, `flux2` or `source` mean zero; `boundary` is required.
/// `u_out` receives `len` values, NaN off the solution mask.
///
/// # Safety
/// Every non-null array must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lma_solve(
    potential: *const LmaPotential,
    flux1: *const f64,
    flux2: *const f64,
    source: *const f64,
    boundary: *const f64,
    len: usize,
    u_out: *mut f64,
) -> LmaStatus {
    guard(|| {
        let p = &deref(potential, "potential")?.p;
        let (forcing, b) = inputs(p, flux1, flux2, source, boundary, len)?;
        let prob = EllipticProblem::from_cofactor(&p.cofactor(), &forcing, &b)?;
        let r = solve(&prob, SolveOptions::default())?;
        write_out(u_out, len, &r.u)
    })
}

unsafe fn inputs(
    p: &ConvexPotential,
    flux1: *const f64,
    flux2: *const f64,
    source: *const f64,
    boundary: *const f64,
    len: usize,
) -> Result<(Forcing, GridFunction2D), Failure> {
    let g = *p.grid();
    let m = p.phi.mask.clone();
    let forcing = Forcing {
        flux: [field_or_zero(g, &m, flux1, len, "flux1")?, field_or_zero(g, &m, flux2, len, "flux2")?],
        source: field_or_zero(g, &m, source, len, "source")?,
    };
    let b = field(g, &m, boundary, len, "boundary")?.ok_or(Failure::Null("boundary"))?;
    Ok((forcing, b))
}

/// Solves directly and through the partial Legendre transform and reports
/// the max-norm difference after pulling back.
///
/// # Safety
/// As for `lma_solve`; `max_diff` null or writable.
#[no_mangle]
pub unsafe extern "C" fn lma_compare_paths(
    potential: *const LmaPotential,
    flux1: *const f64,
    flux2: *const f64,
    source: *const f64,
    boundary: *const f64,
    len: usize,
    max_diff: *mut f64,
) -> LmaStatus {
    guard(|| {
        let p = &deref(potential, "potential")?.p;
        let o = out(max_diff, "max_diff")?;
        let (forcing, b) = inputs(p, flux1, flux2, source, boundary, len)?;
        *o = direct_vs_transformed(p, &forcing, &b, None, SolveOptions::default())?.max_diff;
        Ok(())
    })
}

/// Fitted exponent and prefactor of `osc u` over the sections
/// `S(x₀, h)` for the `count` heights.
///
/// # Safety
/// `u` holds `len` doubles, `heights` holds `count`; outputs null or writable.
#[no_mangle]
pub unsafe extern "C" fn lma_holder_scan(
    potential: *const LmaPotential,
    u: *const f64,
    len: usize,
    x0: f64,
    y0: f64,
    heights: *const f64,
    count: usize,
    q: f64,
    gamma0: *mut f64,
    prefactor: *mut f64,
) -> LmaStatus {
    guard(|| {
        let p = &deref(potential, "potential")?.p;
        let u = field(*p.grid(), &p.phi.mask, u, len, "u")?.ok_or(Failure::Null("u"))?;
        if heights.is_null() {
            return Err(Failure::Null("heights"));
        }
        let hs = std::slice::from_raw_parts(heights, count);
        let r = holder_scan(&u, p, [x0, y0], hs, q)?;
        *out(gamma0, "gamma0")? = r.gamma0;
        *out(prefactor, "prefactor")? = r.prefactor;
        Ok(())
    })
}

/// `sup/inf` over `S(x₀, h)` of the homogeneous solution on `S(x₀, 2h)`
/// with nonnegative Dirichlet data.
///
/// # Safety
/// `data` holds `len` doubles; `ratio` null or writable.
#[no_mangle]
pub unsafe extern "C" fn lma_harnack_ratio(
    potential: *const LmaPotential,
    x0: f64,
    y0: f64,
    h: f64,
    data: *const f64,
    len: usize,
    ratio: *mut f64,
) -> LmaStatus {
    guard(|| {
        let p = &deref(potential, "potential")?.p;
        let o = out(ratio, "ratio")?;
        let d = field(*p.grid(), &p.phi.mask, data, len, "data")?.ok_or(Failure::Null("data"))?;
        *o = harnack_ratio(p, [x0, y0], h, &d, SolveOptions::default())?.ratio;
        Ok(())
    })
}

/// Runs the full pipeline from a config file. `out_dir`, if not null,
/// overrides the config's output directory. `passed` is set to 1 when
/// every stage assertion holds, else 0.
///
/// # Safety
/// Strings null or NUL terminated; `passed` null or writable.
#[no_mangle]
pub unsafe extern "C" fn lma_run_pipeline(config_path: *const c_char, out_dir: *const c_char, passed: *mut i32) -> LmaStatus {
    guard(|| {
        let path = c_str(config_path, "config_path")?;
        let o = out(passed, "passed")?;
        let mut cfg = ExperimentConfig::load(Path::new(path))?;
        if !out_dir.is_null() {
            cfg.out = c_str(out_dir, "out_dir")?.into();
        }
        *o = i32::from(run_pipeline(&cfg)?.passed());
        Ok(())
    })
}
