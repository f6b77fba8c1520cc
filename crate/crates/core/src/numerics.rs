//! Quadrature, differentiation, root finding and grid helpers shared by the
//! physics modules.

/// Composite trapezoid rule on a uniform grid.
pub fn trapezoid(values: &[f64], step: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => step * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1])),
    }
}

/// Quadrature weights of the composite Simpson rule on an arbitrary sorted
/// grid. Pairs of intervals are integrated by the interpolating parabola; an
/// odd trailing interval uses the parabola through the last three nodes.
pub fn simpson_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut w = vec![0.0; n];
    if n < 2 {
        return w;
    }
    if n == 2 {
        let h = x[1] - x[0];
        w[0] = 0.5 * h;
        w[1] = 0.5 * h;
        return w;
    }
    let intervals = n - 1;
    let pairs = intervals / 2;
    for p in 0..pairs {
        let i = 2 * p;
        let h0 = x[i + 1] - x[i];
        let h1 = x[i + 2] - x[i + 1];
        let s = (h0 + h1) / 6.0;
        w[i] += s * (2.0 - h1 / h0);
        w[i + 1] += s * (h0 + h1) * (h0 + h1) / (h0 * h1);
        w[i + 2] += s * (2.0 - h0 / h1);
    }
    if intervals % 2 == 1 {
        let i = n - 3;
        let h0 = x[i + 1] - x[i];
        let h1 = x[i + 2] - x[i + 1];
        w[i + 2] += (2.0 * h1 * h1 + 3.0 * h0 * h1) / (6.0 * (h0 + h1));
        w[i + 1] += (h1 * h1 + 3.0 * h0 * h1) / (6.0 * h0);
        w[i] -= h1 * h1 * h1 / (6.0 * h0 * (h0 + h1));
    }
    w
}

/// Composite Simpson rule on an arbitrary sorted grid.
pub fn simpson(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    simpson_weights(x).iter().zip(y).map(|(w, v)| w * v).sum()
}

pub fn weighted_sum(weights: &[f64], values: &[f64]) -> f64 {
    weights.iter().zip(values).map(|(w, v)| w * v).sum()
}

const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Five-point Gauss-Legendre rule on `[a, b]`.
pub fn gauss_legendre5<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    GL5_NODES
        .iter()
        .zip(GL5_WEIGHTS.iter())
        .map(|(n, w)| w * f(mid + half * n))
        .sum::<f64>()
        * half
}

/// Fourth-order central difference.
pub fn derivative4<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}

/// Fourth-order central differences of uniformly sampled data. The two
/// outermost points on each side fall back to second-order stencils.
pub fn gradient4(values: &[f64], step: f64) -> Vec<f64> {
    let n = values.len();
    let mut d = vec![0.0; n];
    if n < 3 {
        return d;
    }
    for i in 0..n {
        d[i] = if i >= 2 && i + 2 < n {
            (values[i - 2] - 8.0 * values[i - 1] + 8.0 * values[i + 1] - values[i + 2])
                / (12.0 * step)
        } else if i >= 1 && i + 1 < n {
            (values[i + 1] - values[i - 1]) / (2.0 * step)
        } else if i == 0 {
            (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * step)
        } else {
            (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * step)
        };
    }
    d
}

/// Bisection on a bracketing interval. Returns `None` without a sign change.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Option<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo).abs() <= tol * (1.0 + mid.abs()) {
            return Some(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Grid on `[lo, hi]` produced by the map `t = center + width * sinh(s)` with
/// `s` uniform. Spacing is about `width * ds` near `center` and grows
/// geometrically in the tails.
pub fn sinh_grid(lo: f64, hi: f64, center: f64, width: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && hi > lo && width > 0.0);
    let s0 = ((lo - center) / width).asinh();
    let s1 = ((hi - center) / width).asinh();
    let mut g: Vec<f64> = (0..n)
        .map(|i| {
            let s = s0 + (s1 - s0) * i as f64 / (n - 1) as f64;
            center + width * s.sinh()
        })
        .collect();
    g[0] = lo;
    g[n - 1] = hi;
    g
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Linear interpolation on sorted abscissae; zero outside the range.
pub fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if n == 0 || x < xs[0] || x > xs[n - 1] {
        return 0.0;
    }
    if n == 1 {
        return ys[0];
    }
    let j = xs.partition_point(|&v| v <= x).clamp(1, n - 1);
    let (x0, x1) = (xs[j - 1], xs[j]);
    if x1 == x0 {
        return ys[j];
    }
    let f = (x - x0) / (x1 - x0);
    ys[j - 1] + f * (ys[j] - ys[j - 1])
}

/// Inverse cumulative distribution of a density known in closed form.
///
/// The cumulative mass is tabulated cell by cell with Gauss-Legendre
/// quadrature; inversion locates the cell and polishes with Newton steps on
/// the exact density.
pub struct QuantileTable<F: Fn(f64) -> f64> {
    density: F,
    edges: Vec<f64>,
    cumulative: Vec<f64>,
}

impl<F: Fn(f64) -> f64> QuantileTable<F> {
    pub fn new(density: F, lo: f64, hi: f64, cells: usize) -> Self {
        let edges = linspace(lo, hi, cells + 1);
        let mut cumulative = Vec::with_capacity(cells + 1);
        cumulative.push(0.0);
        let mut acc = 0.0;
        for w in edges.windows(2) {
            acc += gauss_legendre5(&density, w[0], w[1]);
            cumulative.push(acc);
        }
        Self {
            density,
            edges,
            cumulative,
        }
    }

    pub fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Mass below `x`, not normalized.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.edges[0] {
            return 0.0;
        }
        if x >= *self.edges.last().unwrap() {
            return self.total();
        }
        let j = self.edges.partition_point(|&e| e <= x) - 1;
        self.cumulative[j] + gauss_legendre5(&self.density, self.edges[j], x)
    }

    /// Position with mass `p * total` to its left.
    pub fn quantile(&self, p: f64) -> f64 {
        let target = p.clamp(0.0, 1.0) * self.total();
        let cells = self.edges.len() - 1;
        let j = (self.cumulative.partition_point(|&c| c <= target)).clamp(1, cells) - 1;
        let (a, b) = (self.edges[j], self.edges[j + 1]);
        let base = self.cumulative[j];
        let span = self.cumulative[j + 1] - base;
        let mut x = if span > 0.0 {
            a + (b - a) * ((target - base) / span).clamp(0.0, 1.0)
        } else {
            0.5 * (a + b)
        };
        for _ in 0..8 {
            let f = base + gauss_legendre5(&self.density, a, x) - target;
            let d = (self.density)(x);
            if d <= 0.0 {
                break;
            }
            let next = (x - f / d).clamp(a, b);
            if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) {
                x = next;
                break;
            }
            x = next;
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_exact_for_cubics_on_uneven_grid() {
        let x = vec![0.0, 0.1, 0.35, 0.5, 0.9, 1.0, 1.7];
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        // parabolas are integrated exactly on every panel
        assert!((simpson(&x, &y) - 1.7f64.powi(3) / 3.0).abs() < 1e-13);
    }

    #[test]
    fn simpson_even_and_odd_counts() {
        for n in [9usize, 10, 101, 102] {
            let x = linspace(0.0, std::f64::consts::PI, n);
            let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
            assert!((simpson(&x, &y) - 2.0).abs() < 5e-3, "n = {n}");
        }
    }

    #[test]
    fn gradient4_matches_derivative() {
        let h = 0.01;
        let x = linspace(0.0, 2.0, 201);
        let y: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let d = gradient4(&y, h);
        for i in 2..199 {
            assert!((d[i] - x[i].exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn bisect_finds_root() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-15).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-14);
        assert!(bisect(|x| x * x + 1.0, 0.0, 2.0, 1e-12).is_none());
    }

    #[test]
    fn sinh_grid_endpoints_and_monotone() {
        let g = sinh_grid(0.0, 1e6, 5.0, 2.0, 1000);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 1e6);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn quantile_table_inverts_normal_cdf() {
        let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let q = QuantileTable::new(pdf, -12.0, 12.0, 4096);
        assert!((q.total() - 1.0).abs() < 1e-14);
        assert!(q.quantile(0.5).abs() < 1e-12);
        // Phi(1) = 0.841344746068543
        assert!((q.quantile(0.841_344_746_068_543) - 1.0).abs() < 1e-11);
        assert!((q.cdf(1.0) - 0.841_344_746_068_543).abs() < 1e-14);
    }
}
