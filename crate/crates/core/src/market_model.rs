//! Model algebra: temporary price impact, liquidation value, solvency
//! membership, transactions with a fixed fee and the admissible trade set.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Constants of the market and of the investor.
///
/// Time is measured in years; `drift` and `volatility` are annualized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketParams {
    /// Liquidation horizon `T`.
    pub horizon: f64,
    /// Price drift `b`.
    pub drift: f64,
    /// Price volatility `sigma`.
    pub volatility: f64,
    /// Temporary impact factor `lambda`.
    pub impact: f64,
    /// Impact exponent `beta`.
    pub impact_exponent: f64,
    /// Ask multiplier `kappa_a >= 1`.
    pub ask: f64,
    /// Bid multiplier `0 < kappa_b <= 1`.
    pub bid: f64,
    /// Fixed fee paid on every trade.
    pub fee: f64,
    /// CRRA exponent, `U(w) = w^gamma`.
    pub gamma: f64,
}

impl MarketParams {
    pub fn validate(&self) -> Result<()> {
        fn bad(name: &'static str, reason: impl Into<String>) -> Result<()> {
            Err(ModelError::InvalidParam {
                name,
                reason: reason.into(),
            })
        }
        let finite = [
            ("horizon", self.horizon),
            ("drift", self.drift),
            ("volatility", self.volatility),
            ("impact", self.impact),
            ("impact_exponent", self.impact_exponent),
            ("ask", self.ask),
            ("bid", self.bid),
            ("fee", self.fee),
            ("gamma", self.gamma),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return bad(name, "must be finite");
            }
        }
        if self.horizon <= 0.0 {
            return bad("horizon", "must be > 0");
        }
        if self.volatility <= 0.0 {
            return bad("volatility", "must be > 0");
        }
        if self.impact < 0.0 {
            return bad("impact", "must be >= 0");
        }
        if self.impact_exponent < 0.0 {
            return bad("impact_exponent", "must be >= 0");
        }
        if self.impact_exponent == 0.0 && self.impact != 0.0 {
            return bad("impact_exponent", "may be 0 only when impact is 0");
        }
        if self.ask < 1.0 {
            return bad("ask", "must be >= 1");
        }
        if !(self.bid > 0.0 && self.bid <= 1.0) {
            return bad("bid", "must lie in (0, 1]");
        }
        if self.fee <= 0.0 {
            return bad("fee", "must be > 0");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1)");
        }
        Ok(())
    }

    /// Impact multiplier `f(e, theta)` applied to the quoted price.
    ///
    /// At `theta = 0` a sale executes at price zero and a purchase at an
    /// infinite price (`f64::INFINITY`).
    pub fn impact(&self, e: f64, theta: f64) -> Result<f64> {
        if theta < 0.0 || theta.is_nan() {
            return Err(ModelError::Domain(format!("negative lag {theta}")));
        }
        Ok(self.impact_unchecked(e, theta))
    }

    #[inline]
    pub(crate) fn impact_unchecked(&self, e: f64, theta: f64) -> f64 {
        if e == 0.0 {
            return 1.0;
        }
        if theta == 0.0 {
            return if e < 0.0 { 0.0 } else { f64::INFINITY };
        }
        let rate = (e / theta).abs();
        let penalty = if self.impact == 0.0 {
            0.0
        } else {
            self.impact * rate.powf(self.impact_exponent)
        };
        if e > 0.0 {
            penalty.exp() * self.ask
        } else {
            (-penalty).exp() * self.bid
        }
    }

    /// Cash obtained by selling the whole position in one block.
    pub fn liquidation_value(&self, s: &State) -> f64 {
        s.x + self.sale_proceeds(s.y, s.p, s.theta)
    }

    /// Fee-adjusted liquidation value `max(x, L - fee)`.
    pub fn liquidation_value_eps(&self, s: &State) -> f64 {
        s.x.max(self.liquidation_value(s) - self.fee)
    }

    #[inline]
    fn sale_proceeds(&self, shares: f64, p: f64, theta: f64) -> f64 {
        if shares == 0.0 {
            0.0
        } else {
            shares * p * self.impact_unchecked(-shares, theta)
        }
    }

    pub fn in_solvency(&self, s: &State) -> Membership {
        if s.y < 0.0 || s.p < 0.0 || s.x.is_nan() || s.x == f64::NEG_INFINITY {
            return Membership::Outside;
        }
        let l = self.liquidation_value_eps(s);
        if s.y > 0.0 && l > 0.0 {
            Membership::Interior
        } else if s.y == 0.0 && l >= 0.0 {
            Membership::Boundary {
                y_edge: true,
                l_edge: l == 0.0,
            }
        } else if l == 0.0 {
            Membership::Boundary {
                y_edge: false,
                l_edge: true,
            }
        } else {
            Membership::Outside
        }
    }

    /// Applies a trade of `e` shares: pays the impacted price and the fee,
    /// resets the lag. Admissibility is not checked.
    pub fn transact(&self, s: &State, e: f64) -> State {
        let x = if e > 0.0 && s.theta == 0.0 {
            f64::NEG_INFINITY
        } else if e == 0.0 {
            s.x - self.fee
        } else {
            s.x - e * s.p * self.impact_unchecked(e, s.theta) - self.fee
        };
        State {
            t: s.t,
            x,
            y: s.y + e,
            p: s.p,
            theta: 0.0,
        }
    }

    /// The set of trades whose post-trade state (with lag zero) stays in the
    /// solvency closure. With lag zero the post-trade fee-adjusted liquidation
    /// value equals the post-trade cash, so the set is
    /// `{ e >= -y : x - e p f(e, theta) - fee >= 0 }`, an interval.
    pub fn admissible_interval(&self, s: &State) -> Option<TradeInterval> {
        let (x, y, p, theta) = (s.x, s.y, s.p, s.theta);
        if theta == 0.0 {
            return (x >= self.fee).then_some(TradeInterval { lo: -y, hi: 0.0 });
        }
        if x >= self.fee {
            return Some(TradeInterval {
                lo: -y,
                hi: self.max_purchase(x, p, theta),
            });
        }
        self.sale_interval(x, y, p, theta)
    }

    /// Largest purchase that leaves non-negative cash; the cash map is
    /// strictly decreasing on `e > 0` and negative at `(x - fee) / (p kappa_a)`.
    fn max_purchase(&self, x: f64, p: f64, theta: f64) -> f64 {
        let slack = x - self.fee;
        if slack <= 0.0 || p <= 0.0 {
            // A zero price makes purchases free and pointless; report no buy side.
            return 0.0;
        }
        let cash = |e: f64| x - e * p * self.impact_unchecked(e, theta) - self.fee;
        let mut lo = 0.0;
        let mut hi = slack / (p * self.ask);
        if cash(hi) >= 0.0 {
            return hi;
        }
        for _ in 0..BISECTION_ITERS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if cash(mid) >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Sales that raise enough cash to cover the fee when `x < fee`.
    /// Proceeds `s p kappa_b exp(-lambda (s/theta)^beta)` are unimodal in `s`.
    fn sale_interval(&self, x: f64, y: f64, p: f64, theta: f64) -> Option<TradeInterval> {
        let need = self.fee - x;
        if y <= 0.0 || p <= 0.0 {
            return None;
        }
        let proceeds = |s: f64| self.sale_proceeds(s, p, theta);
        let peak = if self.impact > 0.0 && self.impact_exponent > 0.0 {
            theta * (self.impact * self.impact_exponent).powf(-1.0 / self.impact_exponent)
        } else {
            f64::INFINITY
        };
        let s_peak = peak.min(y);
        if proceeds(s_peak) < need {
            return None;
        }
        // smallest s in (0, s_peak] with proceeds >= need
        let (mut lo, mut hi) = (0.0, s_peak);
        for _ in 0..BISECTION_ITERS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if proceeds(mid) >= need {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let s_lo = hi;
        let s_hi = if proceeds(y) >= need {
            y
        } else {
            let (mut lo, mut hi) = (s_peak, y);
            for _ in 0..BISECTION_ITERS {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if proceeds(mid) >= need {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        };
        Some(TradeInterval {
            lo: -s_hi,
            hi: -s_lo,
        })
    }

    /// CRRA utility `w^gamma`, with `U(0) = 0`.
    pub fn utility(&self, w: f64) -> Result<f64> {
        if w < 0.0 || w.is_nan() {
            return Err(ModelError::Domain(format!("utility of negative wealth {w}")));
        }
        Ok(self.utility_unchecked(w))
    }

    #[inline]
    pub(crate) fn utility_unchecked(&self, w: f64) -> f64 {
        if w <= 0.0 {
            0.0
        } else {
            w.powf(self.gamma)
        }
    }

    pub fn utility_l(&self, s: &State) -> Result<f64> {
        self.utility(self.liquidation_value_eps(s))
    }

    pub fn merton_rate(&self) -> f64 {
        self.gamma / (1.0 - self.gamma) * self.drift * self.drift
            / (2.0 * self.volatility * self.volatility)
    }

    /// Frictionless upper bound `exp(rho (T - t)) (x + y p)^gamma`.
    pub fn merton_bound(&self, t: f64, x: f64, y: f64, p: f64) -> Result<f64> {
        let w = x + y * p;
        if w < 0.0 || w.is_nan() {
            return Err(ModelError::Domain(format!("negative mark-to-market wealth {w}")));
        }
        Ok((self.merton_rate() * (self.horizon - t)).exp() * self.utility_unchecked(w))
    }
}

const BISECTION_ITERS: usize = 200;

/// A point `(t, x, y, p, theta)` of the state space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub t: f64,
    /// Cash.
    pub x: f64,
    /// Shares held.
    pub y: f64,
    /// Quoted price.
    pub p: f64,
    /// Time since the last trade.
    pub theta: f64,
}

impl State {
    /// Checked constructor. Prices of zero are accepted as the closure of the
    /// price half-line (grids may start at `p = 0`).
    pub fn new(t: f64, x: f64, y: f64, p: f64, theta: f64) -> Result<Self> {
        if !(y >= 0.0) {
            return Err(ModelError::Domain(format!("negative shares {y}")));
        }
        if !(p >= 0.0) {
            return Err(ModelError::Domain(format!("negative price {p}")));
        }
        if !(theta >= 0.0 && theta <= t + 1e-12 * t.abs().max(1.0)) {
            return Err(ModelError::Domain(format!("lag {theta} outside [0, {t}]")));
        }
        Ok(State { t, x, y, p, theta })
    }

    pub fn at(x: f64, y: f64, p: f64, theta: f64) -> Self {
        State {
            t: theta,
            x,
            y,
            p,
            theta,
        }
    }

    pub fn wealth(&self) -> f64 {
        self.x + self.y * self.p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Membership {
    Interior,
    /// On the boundary; at the corner `x = y = 0` both flags are set.
    Boundary { y_edge: bool, l_edge: bool },
    Outside,
}

impl Membership {
    pub fn in_closure(self) -> bool {
        !matches!(self, Membership::Outside)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeInterval {
    pub lo: f64,
    pub hi: f64,
}

impl TradeInterval {
    pub fn contains(&self, e: f64) -> bool {
        self.lo <= e && e <= self.hi
    }

    pub fn clamp(&self, e: f64) -> f64 {
        e.clamp(self.lo, self.hi)
    }
}
