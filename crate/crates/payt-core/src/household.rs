//! Household disposal model: utility from consumption net of the effort cost
//! of avoiding and recycling waste, with a unit price on unsorted disposal.
//!
//! For V(w_A, w_R) = U(y - t (W - w_A - w_R)) - C(w_A, w_R), the price
//! responses at an interior optimum factor as
//!
//!   dw_A/dt = (C_RR - C_AR) * F / soc,
//!   dw_R/dt = (C_AA - C_AR) * F / soc,
//!
//! with F = U' + U'' t (w_A + w_R - W) > 0 and soc the (positive) Hessian
//! determinant, so the response signs depend only on the cost curvatures. A
//! damped-Newton maximizer provides an independent finite-difference check.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("cost curvatures must be positive (got C_AA={c_aa}, C_RR={c_rr})")]
    InvalidCurvature { c_aa: f64, c_rr: f64 },
    #[error("first-order conditions do not hold at the supplied point (residual {0:.3e})")]
    NotAtOptimum(f64),
    #[error("second-order condition failed: Hessian determinant {0:.3e} is not positive")]
    SecondOrderFailure(f64),
    #[error("common factor U' + U'' t (w_A + w_R - W) = {0:.3e} is not positive")]
    CommonFactorNotPositive(f64),
    #[error("no interior optimum found: {0}")]
    NoInteriorOptimum(String),
    #[error("objective is not concave at the candidate optimum")]
    NonConcave,
}

/// Consumption utility. Log is the default testing form; Quadratic admits a
/// closed-form optimum.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Utility {
    /// U(c) = ln(1 + c), defined for c > -1.
    Log,
    /// U(c) = c - kappa/2 c^2, increasing while c < 1/kappa.
    Quadratic { kappa: f64 },
}

impl Utility {
    pub fn u1(&self, c: f64) -> f64 {
        match self {
            Utility::Log => 1.0 / (1.0 + c),
            Utility::Quadratic { kappa } => 1.0 - kappa * c,
        }
    }

    pub fn u2(&self, c: f64) -> f64 {
        match self {
            Utility::Log => -1.0 / ((1.0 + c) * (1.0 + c)),
            Utility::Quadratic { kappa } => -kappa,
        }
    }

    fn domain_ok(&self, c: f64) -> bool {
        match self {
            Utility::Log => c > -1.0 + 1e-9,
            Utility::Quadratic { kappa } => 1.0 - kappa * c > 1e-9,
        }
    }
}

/// Quadratic effort cost with a cross term:
/// C = c_aa/2 w_A^2 + c_rr/2 w_R^2 + c_ar w_A w_R + linear terms.
/// Positive c_ar makes the two behaviors substitutes, negative complements.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadraticCost {
    pub c_aa: f64,
    pub c_rr: f64,
    pub c_ar: f64,
    pub linear_a: f64,
    pub linear_r: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HouseholdModel {
    pub income: f64,
    pub potential_waste: f64,
    pub price: f64,
    pub utility: Utility,
    pub cost: QuadraticCost,
    /// Habit and taste shifters; they move the linear cost terms and leave
    /// the curvatures (and therefore all response signs) untouched.
    pub shifters: Vec<f64>,
}

impl HouseholdModel {
    fn effective_linear(&self) -> (f64, f64) {
        let mut a = self.cost.linear_a;
        let mut r = self.cost.linear_r;
        for (i, s) in self.shifters.iter().enumerate() {
            if i % 2 == 0 {
                a += s;
            } else {
                r += s;
            }
        }
        (a, r)
    }

    pub fn consumption(&self, w_a: f64, w_r: f64) -> f64 {
        self.income - self.price * (self.potential_waste - (w_a + w_r))
    }

    fn cost_grad(&self, w_a: f64, w_r: f64) -> (f64, f64) {
        let (la, lr) = self.effective_linear();
        (
            self.cost.c_aa * w_a + self.cost.c_ar * w_r + la,
            self.cost.c_rr * w_r + self.cost.c_ar * w_a + lr,
        )
    }

    /// Gradient of V at (w_a, w_r).
    pub fn v_grad(&self, w_a: f64, w_r: f64) -> (f64, f64) {
        let c = self.consumption(w_a, w_r);
        let u1t = self.utility.u1(c) * self.price;
        let (ca, cr) = self.cost_grad(w_a, w_r);
        (u1t - ca, u1t - cr)
    }

    /// Hessian entries (V_AA, V_RR, V_AR) of V at (w_a, w_r).
    pub fn v_hessian(&self, w_a: f64, w_r: f64) -> (f64, f64, f64) {
        let c = self.consumption(w_a, w_r);
        let u2t2 = self.utility.u2(c) * self.price * self.price;
        (u2t2 - self.cost.c_aa, u2t2 - self.cost.c_rr, u2t2 - self.cost.c_ar)
    }

    fn in_domain(&self, w_a: f64, w_r: f64) -> bool {
        w_a > 0.0
            && w_r > 0.0
            && w_a + w_r < self.potential_waste
            && self.utility.domain_ok(self.consumption(w_a, w_r))
    }

    /// Damped Newton ascent on V from an interior start.
    pub fn solve_optimum(&self) -> Result<(f64, f64), TheoryError> {
        let mut w_a = self.potential_waste / 4.0;
        let mut w_r = self.potential_waste / 4.0;
        if !self.in_domain(w_a, w_r) {
            return Err(TheoryError::NoInteriorOptimum("starting point infeasible".into()));
        }
        for _ in 0..200 {
            let (ga, gr) = self.v_grad(w_a, w_r);
            let scale = 1.0 + self.utility.u1(self.consumption(w_a, w_r)).abs() * self.price;
            if ga.abs().max(gr.abs()) < 1e-12 * scale {
                let (haa, hrr, har) = self.v_hessian(w_a, w_r);
                if haa >= 0.0 || haa * hrr - har * har <= 0.0 {
                    return Err(TheoryError::NonConcave);
                }
                return Ok((w_a, w_r));
            }
            let (haa, hrr, har) = self.v_hessian(w_a, w_r);
            let det = haa * hrr - har * har;
            if det.abs() < 1e-300 {
                return Err(TheoryError::NoInteriorOptimum("singular Hessian".into()));
            }
            // Newton step: -H^{-1} g
            let mut da = -(hrr * ga - har * gr) / det;
            let mut dr = -(haa * gr - har * ga) / det;
            let mut step = 1.0;
            while step > 1e-12 && !self.in_domain(w_a + step * da, w_r + step * dr) {
                step /= 2.0;
            }
            if step <= 1e-12 {
                return Err(TheoryError::NoInteriorOptimum(
                    "step collapsed at the domain boundary".into(),
                ));
            }
            da *= step;
            dr *= step;
            w_a += da;
            w_r += dr;
            if da.abs().max(dr.abs()) < 1e-15 * (1.0 + w_a.abs().max(w_r.abs())) {
                break;
            }
        }
        let (ga, gr) = self.v_grad(w_a, w_r);
        let scale = 1.0 + self.utility.u1(self.consumption(w_a, w_r)).abs() * self.price;
        if ga.abs().max(gr.abs()) < 1e-9 * scale {
            let (haa, hrr, har) = self.v_hessian(w_a, w_r);
            if haa >= 0.0 || haa * hrr - har * har <= 0.0 {
                return Err(TheoryError::NonConcave);
            }
            Ok((w_a, w_r))
        } else {
            Err(TheoryError::NoInteriorOptimum(format!(
                "Newton did not converge (residual {:.3e})",
                ga.abs().max(gr.abs())
            )))
        }
    }
}

/// Sign triple used by the response classification.
pub type SignPair = (i8, i8);

fn sign_of(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Response signs from cost curvatures alone:
/// sign(dw_A/dt) = sign(C_RR - C_AR), sign(dw_R/dt) = sign(C_AA - C_AR).
pub fn statics_signs(c_aa: f64, c_rr: f64, c_ar: f64) -> Result<SignPair, TheoryError> {
    if !(c_aa > 0.0 && c_rr > 0.0) {
        return Err(TheoryError::InvalidCurvature { c_aa, c_rr });
    }
    Ok((sign_of(c_rr - c_ar), sign_of(c_aa - c_ar)))
}

/// Qualitative response regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionClass {
    /// Both avoidance and recycling rise with the price.
    BothIncrease,
    /// Recycling rises while avoidance falls (total waste increases):
    /// substitutes with avoidance costs steeper than recycling costs.
    RecyclingUpAvoidanceDown,
    /// Avoidance rises while recycling falls: substitutes with recycling
    /// costs steeper than avoidance costs.
    AvoidanceUpRecyclingDown,
    Unclassified,
}

pub fn classify_prediction(signs: SignPair, c_aa: f64, c_rr: f64, c_ar: f64) -> PredictionClass {
    match signs {
        (1, 1) => PredictionClass::BothIncrease,
        (-1, 1) if c_aa.abs() > c_ar.abs() && c_ar.abs() > c_rr.abs() => {
            PredictionClass::RecyclingUpAvoidanceDown
        }
        (1, -1) if c_rr.abs() > c_ar.abs() && c_ar.abs() > c_aa.abs() => {
            PredictionClass::AvoidanceUpRecyclingDown
        }
        _ => PredictionClass::Unclassified,
    }
}

/// Empirical counterpart of the cost-curvature regimes: the sign of the
/// cross-unit correlation between recycling and avoidance responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Substitutability {
    Substitutes,
    Complements,
    Indeterminate,
}

/// Classifies behaviors from pointwise response estimates: a negative
/// correlation between recycling responses and avoidance responses marks the
/// two behaviors as substitutes. Avoidance responses are the negated total
/// responses.
pub fn substitution_classification(
    cape_rw: &[f64],
    cape_avoidance: &[f64],
) -> (f64, Substitutability) {
    assert_eq!(cape_rw.len(), cape_avoidance.len());
    let n = cape_rw.len();
    if n < 3 {
        return (f64::NAN, Substitutability::Indeterminate);
    }
    let mx = cape_rw.iter().sum::<f64>() / n as f64;
    let my = cape_avoidance.iter().sum::<f64>() / n as f64;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in cape_rw.iter().zip(cape_avoidance) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx <= 0.0 || vy <= 0.0 {
        return (f64::NAN, Substitutability::Indeterminate);
    }
    let corr = cov / (vx.sqrt() * vy.sqrt());
    let class = if corr < 0.0 {
        Substitutability::Substitutes
    } else if corr > 0.0 {
        Substitutability::Complements
    } else {
        Substitutability::Indeterminate
    };
    (corr, class)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StaticsResult {
    pub dwa_dt: f64,
    pub dwr_dt: f64,
    pub signs: SignPair,
    pub prediction_class: PredictionClass,
    pub common_factor: f64,
    pub soc: f64,
}

/// Closed-form price responses at a supplied interior optimum.
pub fn statics_values(
    model: &HouseholdModel,
    w_star: (f64, f64),
) -> Result<StaticsResult, TheoryError> {
    let (w_a, w_r) = w_star;
    let (ga, gr) = model.v_grad(w_a, w_r);
    let scale = 1.0 + model.utility.u1(model.consumption(w_a, w_r)).abs() * model.price;
    let resid = ga.abs().max(gr.abs());
    if resid > 1e-8 * scale {
        return Err(TheoryError::NotAtOptimum(resid));
    }
    let c = model.consumption(w_a, w_r);
    let common_factor = model.utility.u1(c)
        + model.utility.u2(c) * model.price * (w_a + w_r - model.potential_waste);
    if common_factor <= 0.0 {
        return Err(TheoryError::CommonFactorNotPositive(common_factor));
    }
    let (haa, hrr, har) = model.v_hessian(w_a, w_r);
    let soc = haa * hrr - har * har;
    if soc <= 0.0 {
        return Err(TheoryError::SecondOrderFailure(soc));
    }
    let dwa_dt = (model.cost.c_rr - model.cost.c_ar) * common_factor / soc;
    let dwr_dt = (model.cost.c_aa - model.cost.c_ar) * common_factor / soc;
    let signs = statics_signs(model.cost.c_aa, model.cost.c_rr, model.cost.c_ar)?;
    Ok(StaticsResult {
        dwa_dt,
        dwr_dt,
        signs,
        prediction_class: classify_prediction(signs, model.cost.c_aa, model.cost.c_rr, model.cost.c_ar),
        common_factor,
        soc,
    })
}

/// Finite-difference oracle: re-solves the optimum at t and t + dt and
/// differences the argmax. dt = 0 returns (0, 0).
pub fn numeric_response(model: &HouseholdModel, dt: f64) -> Result<(f64, f64), TheoryError> {
    if dt == 0.0 {
        return Ok((0.0, 0.0));
    }
    let base = model.solve_optimum()?;
    let shifted_model = HouseholdModel { price: model.price + dt, ..model.clone() };
    let shifted = shifted_model.solve_optimum()?;
    Ok(((shifted.0 - base.0) / dt, (shifted.1 - base.1) / dt))
}
