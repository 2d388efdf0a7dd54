//! Radial kernel functions and Robin-operator applications to them.
//!
//! Kernels are parameterized by the squared distance `s = r^2` internally,
//! which makes every derivative formula free of `0/0` at coincident points:
//! with `phi(r) = f(r^2)`,
//!
//! ```text
//!   grad_x phi(||x - y||)    = 2 f'(s) (x - y)
//!   hess_xx phi(||x - y||)   = 2 f'(s) I + 4 f''(s) (x - y)(x - y)^T
//! ```
//!
//! so the gradient is exactly zero and the Hessian has its analytic limit
//! (`eps^2 I` for the multiquadric, `-2 eps^2 I` for the Gaussian) at r = 0.
//! Derivatives are closed-form; finite differences appear only in tests.

use crate::{Error, Result, Vec2};

/// Supported radial kernel families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// `phi(r) = sqrt(1 + (eps r)^2)`
    Multiquadric,
    /// `phi(r) = exp(-(eps r)^2)`
    Gaussian,
}

/// A radial kernel with a fixed shape parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialKernel {
    pub kind: KernelKind,
    epsilon: f64,
}

impl RadialKernel {
    pub fn new(kind: KernelKind, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "shape parameter must be positive, got {epsilon}"
            )));
        }
        Ok(Self { kind, epsilon })
    }

    pub fn multiquadric(epsilon: f64) -> Result<Self> {
        Self::new(KernelKind::Multiquadric, epsilon)
    }

    pub fn gaussian(epsilon: f64) -> Result<Self> {
        Self::new(KernelKind::Gaussian, epsilon)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// phi(r). Negative `r` is an argument error.
    pub fn value(&self, r: f64) -> Result<f64> {
        if r < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "kernel argument must be nonnegative, got {r}"
            )));
        }
        Ok(self.f(r * r))
    }

    /// f(s) where s = r^2.
    #[inline]
    pub(crate) fn f(&self, s: f64) -> f64 {
        let e2 = self.epsilon * self.epsilon;
        match self.kind {
            KernelKind::Multiquadric => (1.0 + e2 * s).sqrt(),
            KernelKind::Gaussian => (-e2 * s).exp(),
        }
    }

    /// f'(s).
    #[inline]
    pub(crate) fn fp(&self, s: f64) -> f64 {
        let e2 = self.epsilon * self.epsilon;
        match self.kind {
            KernelKind::Multiquadric => 0.5 * e2 / (1.0 + e2 * s).sqrt(),
            KernelKind::Gaussian => -e2 * (-e2 * s).exp(),
        }
    }

    /// f''(s).
    #[inline]
    pub(crate) fn fpp(&self, s: f64) -> f64 {
        let e2 = self.epsilon * self.epsilon;
        match self.kind {
            KernelKind::Multiquadric => {
                let t = 1.0 + e2 * s;
                -0.25 * e2 * e2 / (t * t.sqrt())
            }
            KernelKind::Gaussian => e2 * e2 * (-e2 * s).exp(),
        }
    }

    /// phi(||x - y||) as a function of the pair.
    pub fn value_at(&self, x: Vec2, y: Vec2) -> f64 {
        self.f((x - y).norm_squared())
    }

    /// Gradient of phi(||x - y||) with respect to `x`.
    pub fn grad_x(&self, x: Vec2, y: Vec2) -> Vec2 {
        let d = x - y;
        2.0 * self.fp(d.norm_squared()) * d
    }

    /// Hessian of phi(||x - y||) with respect to `x`.
    pub fn hess_xx(&self, x: Vec2, y: Vec2) -> nalgebra::Matrix2<f64> {
        let d = x - y;
        let s = d.norm_squared();
        let fp = self.fp(s);
        let fpp = self.fpp(s);
        let mut h = 4.0 * fpp * d * d.transpose();
        h[(0, 0)] += 2.0 * fp;
        h[(1, 1)] += 2.0 * fp;
        h
    }
}

/// The Robin boundary operator `D_op = -D d/d_eta - k`, anchored at a
/// boundary point with its unit normal. `reaction_coeff` carries the
/// product of the on-rate with the unbound density at the anchor.
#[derive(Debug, Clone, Copy)]
pub struct RobinOperatorSpec {
    pub diffusion: f64,
    pub reaction_coeff: f64,
    normal: Vec2,
    pub anchor: Vec2,
}

impl RobinOperatorSpec {
    pub fn new(diffusion: f64, reaction_coeff: f64, normal: Vec2, anchor: Vec2) -> Result<Self> {
        if (normal.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "Robin operator normal must be unit length, |eta| = {}",
                normal.norm()
            )));
        }
        Ok(Self {
            diffusion,
            reaction_coeff,
            normal,
            anchor,
        })
    }

    pub fn normal(&self) -> Vec2 {
        self.normal
    }
}

/// Applies the Robin operator to the kernel *as a function of the center
/// argument*, evaluated at `(eval_point, center)`:
///
/// ```text
///   D_c phi(||e - c||) = -D (grad_c phi) . eta - k phi
///                      =  2 D f'(s) eta . (e - c) - k f(s)
/// ```
pub fn robin_apply_to_kernel(
    op: &RobinOperatorSpec,
    kernel: &RadialKernel,
    eval_point: Vec2,
    center: Vec2,
) -> f64 {
    let d = eval_point - center;
    let s = d.norm_squared();
    2.0 * op.diffusion * kernel.fp(s) * op.normal.dot(&d) - op.reaction_coeff * kernel.f(s)
}

/// Applies two Robin operators to the kernel, one per argument, evaluated
/// at the pair of anchors: `D_p1 ( D_p2 phi(||. - .||) )`.
///
/// With `d = a1 - a2`, `s = |d|^2`:
///
/// ```text
///   -2 D1 D2 f'(s) (eta1 . eta2) - 4 D1 D2 f''(s) (eta1 . d)(eta2 . d)
///   + 2 D1 k2 f'(s) (eta1 . d)  - 2 k1 D2 f'(s) (eta2 . d) + k1 k2 f(s)
/// ```
///
/// The closed form is validated against nested finite differences in the
/// test suite; it is symmetric under swapping the two operators.
pub fn robin_robin_apply_to_kernel(
    op1: &RobinOperatorSpec,
    op2: &RobinOperatorSpec,
    kernel: &RadialKernel,
) -> f64 {
    let d = op1.anchor - op2.anchor;
    let s = d.norm_squared();
    let f = kernel.f(s);
    let fp = kernel.fp(s);
    let fpp = kernel.fpp(s);
    let (d1, k1, n1) = (op1.diffusion, op1.reaction_coeff, op1.normal);
    let (d2, k2, n2) = (op2.diffusion, op2.reaction_coeff, op2.normal);

    -2.0 * d1 * d2 * fp * n1.dot(&n2) - 4.0 * d1 * d2 * fpp * n1.dot(&d) * n2.dot(&d)
        + 2.0 * d1 * k2 * fp * n1.dot(&d)
        - 2.0 * k1 * d2 * fp * n2.dot(&d)
        + k1 * k2 * f
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const KINDS: [KernelKind; 2] = [KernelKind::Multiquadric, KernelKind::Gaussian];
    const EPSILONS: [f64; 4] = [0.5, 0.9, 5.0, 35.0];

    fn pseudo_random(seed: &mut u64) -> f64 {
        *seed = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((*seed >> 33) as f64) / (u32::MAX as f64)
    }

    #[test]
    fn kernel_value_examples() {
        let mq = RadialKernel::multiquadric(0.9).unwrap();
        assert_eq!(mq.value(0.0).unwrap(), 1.0);
        let ga = RadialKernel::gaussian(3.7).unwrap();
        assert_eq!(ga.value(0.0).unwrap(), 1.0);
        let mq1 = RadialKernel::multiquadric(1.0).unwrap();
        assert!((mq1.value(3.0f64.sqrt()).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn negative_radius_is_rejected() {
        let mq = RadialKernel::multiquadric(1.0).unwrap();
        assert!(mq.value(-0.1).is_err());
    }

    #[test]
    fn nonpositive_epsilon_is_rejected() {
        assert!(RadialKernel::gaussian(0.0).is_err());
        assert!(RadialKernel::multiquadric(-2.0).is_err());
    }

    #[test]
    fn kernel_value_finite_for_large_radius() {
        for kind in KINDS {
            for eps in EPSILONS {
                let k = RadialKernel::new(kind, eps).unwrap();
                assert!(k.value(1e6).unwrap().is_finite());
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let h = 1e-6;
        for kind in KINDS {
            for eps in EPSILONS {
                let k = RadialKernel::new(kind, eps).unwrap();
                let mut seed = 0xfeed ^ (eps.to_bits());
                for _ in 0..100 {
                    // random pair with r in [0.01, 2]
                    let ang = pseudo_random(&mut seed) * std::f64::consts::TAU;
                    let r = 0.01 + 1.99 * pseudo_random(&mut seed);
                    let x = Vec2::new(pseudo_random(&mut seed), pseudo_random(&mut seed));
                    let y = x + r * Vec2::new(ang.cos(), ang.sin());
                    let g = k.grad_x(x, y);
                    for dim in 0..2 {
                        let mut e = Vec2::zeros();
                        e[dim] = h;
                        let fd = (k.value_at(x + e, y) - k.value_at(x - e, y)) / (2.0 * h);
                        let scale = g.norm().max(1e-8);
                        assert!(
                            (g[dim] - fd).abs() / scale <= 1e-5,
                            "{kind:?} eps={eps} r={r} dim={dim}: {} vs {}",
                            g[dim],
                            fd
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn hessian_matches_central_differences_of_gradient() {
        let h = 1e-6;
        for kind in KINDS {
            for eps in EPSILONS {
                let k = RadialKernel::new(kind, eps).unwrap();
                let mut seed = 0xbeef ^ (eps.to_bits());
                for _ in 0..100 {
                    let ang = pseudo_random(&mut seed) * std::f64::consts::TAU;
                    let r = 0.01 + 1.99 * pseudo_random(&mut seed);
                    let x = Vec2::new(pseudo_random(&mut seed), pseudo_random(&mut seed));
                    let y = x + r * Vec2::new(ang.cos(), ang.sin());
                    let hess = k.hess_xx(x, y);
                    let scale = hess.norm().max(1e-8);
                    for dim in 0..2 {
                        let mut e = Vec2::zeros();
                        e[dim] = h;
                        let fd = (k.grad_x(x + e, y) - k.grad_x(x - e, y)) / (2.0 * h);
                        for row in 0..2 {
                            assert!(
                                (hess[(row, dim)] - fd[row]).abs() / scale <= 1e-5,
                                "{kind:?} eps={eps} r={r}: H[{row},{dim}]"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn hessian_limits_at_zero_radius() {
        let x = Vec2::new(0.3, -0.7);
        let mq = RadialKernel::multiquadric(2.0).unwrap();
        let h = mq.hess_xx(x, x);
        assert!((h[(0, 0)] - 4.0).abs() < 1e-14); // eps^2 I
        assert!((h[(1, 1)] - 4.0).abs() < 1e-14);
        assert!(h[(0, 1)].abs() < 1e-14);
        let ga = RadialKernel::gaussian(2.0).unwrap();
        let h = ga.hess_xx(x, x);
        assert!((h[(0, 0)] + 8.0).abs() < 1e-14); // -2 eps^2 I
        assert!(mq.grad_x(x, x).norm() == 0.0);
    }

    #[test]
    fn robin_apply_examples() {
        let mq = RadialKernel::multiquadric(1.0).unwrap();
        // gradient of a radial kernel vanishes at r = 0
        let p = Vec2::new(0.2, 0.5);
        let op = RobinOperatorSpec::new(1.3, 0.0, Vec2::new(0.0, 1.0), p).unwrap();
        assert_eq!(robin_apply_to_kernel(&op, &mq, p, p), 0.0);

        // pure reaction reduces to a scaling of phi
        let op = RobinOperatorSpec::new(0.0, 2.5, Vec2::new(1.0, 0.0), p).unwrap();
        let e = Vec2::new(1.0, 0.5);
        let r = (e - p).norm();
        assert!(
            (robin_apply_to_kernel(&op, &mq, e, p) + 2.5 * mq.value(r).unwrap()).abs() < 1e-14
        );

        // MQ, eps=1, D=1, eta=(1,0), eval=(1,0), center=(0,0), k=0 -> +1/sqrt(2)
        let op = RobinOperatorSpec::new(1.0, 0.0, Vec2::new(1.0, 0.0), Vec2::zeros()).unwrap();
        let v = robin_apply_to_kernel(&op, &mq, Vec2::new(1.0, 0.0), Vec2::zeros());
        assert!((v - 1.0 / 2.0f64.sqrt()).abs() < 1e-14, "got {v}");
    }

    #[test]
    fn robin_apply_matches_central_differences() {
        // -D (grad_c phi) . eta - k phi, differenced in the center argument
        let h = 1e-6;
        for kind in KINDS {
            for eps in [0.9, 5.0] {
                let k = RadialKernel::new(kind, eps).unwrap();
                let mut seed = 0x5eed ^ eps.to_bits();
                for _ in 0..50 {
                    let ang = pseudo_random(&mut seed) * std::f64::consts::TAU;
                    let n = Vec2::new(ang.cos(), ang.sin());
                    let c = Vec2::new(pseudo_random(&mut seed), pseudo_random(&mut seed));
                    let e = c + (0.05 + pseudo_random(&mut seed)) * Vec2::new(0.6, -0.8);
                    let dcoef = 0.1 + pseudo_random(&mut seed);
                    let kcoef = pseudo_random(&mut seed) - 0.5;
                    let op = RobinOperatorSpec::new(dcoef, kcoef, n, c).unwrap();
                    let analytic = robin_apply_to_kernel(&op, &k, e, c);
                    let fd = -dcoef
                        * (k.value_at(e, c + h * n) - k.value_at(e, c - h * n))
                        / (2.0 * h)
                        - kcoef * k.value_at(e, c);
                    assert!(
                        (analytic - fd).abs() <= 1e-6 * analytic.abs().max(1.0),
                        "{kind:?} eps={eps}: {analytic} vs {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn robin_robin_pure_reaction_is_product_of_scalings() {
        let mq = RadialKernel::multiquadric(0.9).unwrap();
        let a1 = Vec2::new(0.0, 0.0);
        let a2 = Vec2::new(0.6, 0.8);
        let op1 = RobinOperatorSpec::new(0.0, 2.0, Vec2::new(1.0, 0.0), a1).unwrap();
        let op2 = RobinOperatorSpec::new(0.0, -3.0, Vec2::new(0.0, 1.0), a2).unwrap();
        let expected = 2.0 * (-3.0) * mq.value(1.0).unwrap();
        assert!((robin_robin_apply_to_kernel(&op1, &op2, &mq) - expected).abs() < 1e-14);
    }

    #[test]
    fn robin_robin_coincident_gaussian_neumann_value() {
        // coincident anchors, pure Neumann, eta1 = eta2: the derivation gives
        // -2 D^2 f'(0) = +2 eps^2 D^2 for the Gaussian; confirmed against the
        // nested finite-difference oracle below.
        let eps = 1.7;
        let ga = RadialKernel::gaussian(eps).unwrap();
        let a = Vec2::new(0.4, -0.2);
        let n = Vec2::new(3.0 / 5.0, 4.0 / 5.0);
        let dcoef = 1.3;
        let op = RobinOperatorSpec::new(dcoef, 0.0, n, a).unwrap();
        let v = robin_robin_apply_to_kernel(&op, &op, &ga);
        assert!((v - 2.0 * eps * eps * dcoef * dcoef).abs() < 1e-12, "got {v}");
    }

    /// Semi-nested oracle: outer operator by central differences of the
    /// analytic inner application (which is itself validated above).
    #[test]
    fn robin_robin_matches_nested_central_differences() {
        let h = 1e-6;
        for kind in KINDS {
            for eps in [0.9, 5.0] {
                let k = RadialKernel::new(kind, eps).unwrap();
                let mut seed = 0xabcd ^ eps.to_bits();
                for _ in 0..100 {
                    let t1 = pseudo_random(&mut seed) * std::f64::consts::TAU;
                    let t2 = pseudo_random(&mut seed) * std::f64::consts::TAU;
                    let a1 = Vec2::new(pseudo_random(&mut seed), pseudo_random(&mut seed));
                    let a2 = a1 + (0.05 + 0.5 * pseudo_random(&mut seed)) * Vec2::new(0.8, 0.6);
                    let d1 = 0.2 + pseudo_random(&mut seed);
                    let d2 = 0.2 + pseudo_random(&mut seed);
                    let k1 = pseudo_random(&mut seed) - 0.5;
                    let k2 = pseudo_random(&mut seed) - 0.5;
                    let n1 = Vec2::new(t1.cos(), t1.sin());
                    let n2 = Vec2::new(t2.cos(), t2.sin());
                    let op1 = RobinOperatorSpec::new(d1, k1, n1, a1).unwrap();
                    let op2 = RobinOperatorSpec::new(d2, k2, n2, a2).unwrap();

                    let analytic = robin_robin_apply_to_kernel(&op1, &op2, &k);

                    // inner application (analytic) as a function of the
                    // first argument; outer by central differences along n1
                    let inner = |p: Vec2| robin_apply_to_kernel(&op2, &k, p, a2);
                    let fd = -d1 * (inner(a1 + h * n1) - inner(a1 - h * n1)) / (2.0 * h)
                        - k1 * inner(a1);
                    assert!(
                        (analytic - fd).abs() <= 1e-5 * analytic.abs().max(1.0),
                        "{kind:?} eps={eps}: {analytic} vs {fd}"
                    );
                }
            }
        }
    }

    /// Fully numeric double-difference oracle on a few configurations.
    #[test]
    fn robin_robin_matches_fully_numeric_oracle() {
        let h = 1e-5;
        let mq = RadialKernel::multiquadric(5.0).unwrap();
        let a1 = Vec2::new(0.1, 0.2);
        let a2 = Vec2::new(0.35, -0.1);
        let n1 = Vec2::new(1.0, 0.0);
        let n2 = Vec2::new(0.6, 0.8);
        let op1 = RobinOperatorSpec::new(0.7, 1.1, n1, a1).unwrap();
        let op2 = RobinOperatorSpec::new(1.9, -0.4, n2, a2).unwrap();
        let analytic = robin_robin_apply_to_kernel(&op1, &op2, &mq);

        let inner_fd = |p: Vec2| {
            -op2.diffusion * (mq.value_at(p, a2 + h * n2) - mq.value_at(p, a2 - h * n2))
                / (2.0 * h)
                - op2.reaction_coeff * mq.value_at(p, a2)
        };
        let fd = -op1.diffusion * (inner_fd(a1 + h * n1) - inner_fd(a1 - h * n1)) / (2.0 * h)
            - op1.reaction_coeff * inner_fd(a1);
        assert!(
            (analytic - fd).abs() <= 1e-4 * analytic.abs().max(1.0),
            "{analytic} vs {fd}"
        );
    }

    proptest! {
        /// Linearity in the operator coefficients: doubling D doubles the
        /// derivative term, assertable by superposition.
        #[test]
        fn robin_apply_is_linear_in_coefficients(
            dcoef in 0.01f64..2.0,
            kcoef in -2.0f64..2.0,
            ex in -1.0f64..1.0,
            ey in -1.0f64..1.0,
            theta in 0.0f64..std::f64::consts::TAU,
        ) {
            let kern = RadialKernel::multiquadric(0.9).unwrap();
            let c = Vec2::new(0.05, -0.3);
            let e = Vec2::new(ex, ey);
            let n = Vec2::new(theta.cos(), theta.sin());
            let op = |d: f64, k: f64| RobinOperatorSpec::new(d, k, n, c).unwrap();

            let full = robin_apply_to_kernel(&op(dcoef, kcoef), &kern, e, c);
            let d_only = robin_apply_to_kernel(&op(dcoef, 0.0), &kern, e, c);
            let k_only = robin_apply_to_kernel(&op(0.0, kcoef), &kern, e, c);
            prop_assert!((full - d_only - k_only).abs() < 1e-12);

            let doubled = robin_apply_to_kernel(&op(2.0 * dcoef, 0.0), &kern, e, c);
            prop_assert!((doubled - 2.0 * d_only).abs() < 1e-12);
        }

        /// The double application is symmetric under swapping operators.
        #[test]
        fn robin_robin_is_symmetric(
            d1 in 0.01f64..2.0, d2 in 0.01f64..2.0,
            k1 in -2.0f64..2.0, k2 in -2.0f64..2.0,
            t1 in 0.0f64..std::f64::consts::TAU,
            t2 in 0.0f64..std::f64::consts::TAU,
            sep in 0.01f64..1.5,
        ) {
            for kind in KINDS {
                let kern = RadialKernel::new(kind, 0.9).unwrap();
                let a1 = Vec2::new(0.0, 0.0);
                let a2 = Vec2::new(sep * t2.cos(), sep * t2.sin());
                let op1 = RobinOperatorSpec::new(d1, k1, Vec2::new(t1.cos(), t1.sin()), a1).unwrap();
                let op2 = RobinOperatorSpec::new(d2, k2, Vec2::new(t2.cos(), t2.sin()), a2).unwrap();
                let fwd = robin_robin_apply_to_kernel(&op1, &op2, &kern);
                let rev = robin_robin_apply_to_kernel(&op2, &op1, &kern);
                prop_assert!((fwd - rev).abs() <= 1e-12 * fwd.abs().max(1.0));
            }
        }
    }
}
