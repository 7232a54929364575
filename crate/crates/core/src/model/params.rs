use crate::error::{Error, Result};

/// Number of players: a finite population or the mean-field limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Players {
    Finite(u32),
    Limit,
}

impl Players {
    /// `1/N`, zero in the limit.
    pub fn inv(self) -> f64 {
        match self {
            Players::Finite(n) => 1.0 / n as f64,
            Players::Limit => 0.0,
        }
    }

    /// `1 - 1/N`, the self-interaction discount on the feedback gain.
    pub fn gain_factor(self) -> f64 {
        1.0 - self.inv()
    }

    /// `1 - 1/N^2`, the factor in front of the quadratic Riccati term.
    pub fn riccati_factor(self) -> f64 {
        let inv = self.inv();
        1.0 - inv * inv
    }

    pub fn count(self) -> Option<usize> {
        match self {
            Players::Finite(n) => Some(n as usize),
            Players::Limit => None,
        }
    }
}

impl std::fmt::Display for Players {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Players::Finite(n) => write!(f, "{n}"),
            Players::Limit => write!(f, "limit"),
        }
    }
}

/// Constants of the interbank lending model.
///
/// State dynamics `dX = [a(m - X) + alpha] dt + sigma (sqrt(1-rho^2) dW + rho dW0)`,
/// running cost `alpha^2/2 - q alpha (m - x) + eps/2 (m - x)^2`, terminal cost
/// `c/2 (m - x)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqParams {
    pub a: f64,
    pub q: f64,
    pub eps: f64,
    pub c: f64,
    pub sigma: f64,
    pub rho: f64,
    pub horizon: f64,
    pub players: Players,
}

impl LqParams {
    /// Checks every invariant and returns the parameters unchanged.
    ///
    /// `sigma = 0` is accepted: several degenerate checks run the model
    /// without noise.
    pub fn validated(self) -> Result<Self> {
        let finite = [self.a, self.q, self.eps, self.c, self.sigma, self.rho, self.horizon]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("LQ parameters must be finite"));
        }
        if self.q * self.q > self.eps {
            return Err(Error::invalid(format!(
                "q^2 = {} exceeds eps = {}",
                self.q * self.q,
                self.eps
            )));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::invalid(format!("rho = {} outside [0, 1]", self.rho)));
        }
        if self.sigma < 0.0 {
            return Err(Error::invalid("sigma must be nonnegative"));
        }
        if self.horizon <= 0.0 {
            return Err(Error::invalid("horizon must be positive"));
        }
        if self.a < 0.0 || self.c < 0.0 {
            return Err(Error::invalid("a and c must be nonnegative"));
        }
        if self.players == Players::Finite(0) {
            return Err(Error::invalid("player count must be positive"));
        }
        Ok(self)
    }

    pub fn with_players(self, players: Players) -> Self {
        LqParams { players, ..self }
    }

    /// Idiosyncratic volatility `sigma sqrt(1 - rho^2)`.
    pub fn idio_vol(&self) -> f64 {
        self.sigma * (1.0 - self.rho * self.rho).sqrt()
    }

    /// Common-noise volatility `sigma rho`.
    pub fn common_vol(&self) -> f64 {
        self.sigma * self.rho
    }

    /// Running cost `f(x, m, alpha)`.
    pub fn running_cost(&self, x: f64, m: f64, alpha: f64) -> f64 {
        let gap = m - x;
        0.5 * alpha * alpha - self.q * alpha * gap + 0.5 * self.eps * gap * gap
    }

    /// Terminal cost `g(x, m)`.
    pub fn terminal_cost(&self, x: f64, m: f64) -> f64 {
        let gap = m - x;
        0.5 * self.c * gap * gap
    }
}
