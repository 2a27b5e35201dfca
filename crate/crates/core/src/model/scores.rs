use std::collections::hash_map::Entry;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{AggModel, Token};
use crate::error::{Error, Result};
use crate::lattice::{Calibrator, Lattice};

/// Hashable identity of a token vector (bit patterns of its features).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenVecKey(pub Vec<Option<u64>>);

impl TokenVecKey {
    pub fn of(token: &[Option<f64>]) -> Self {
        TokenVecKey(token.iter().map(|x| x.map(f64::to_bits)).collect())
    }
}

/// Precomputed `phi` values of a `K = 1` model over a finite token
/// universe, plus the `rho` layers needed to score an example from them.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenScoreTable {
    scores: HashMap<TokenVecKey, f64>,
    rho_calibrator: Calibrator,
    rho_lattice: Lattice,
    output_calibrator: Calibrator,
}

impl AggModel {
    /// Evaluates `phi` once per distinct token of `universe`.
    pub fn export_token_scores<'a, I>(&self, universe: I) -> Result<TokenScoreTable>
    where
        I: IntoIterator<Item = &'a Token>,
    {
        if self.k != 1 {
            return Err(Error::Precondition(format!(
                "token score export needs K = 1, model has K = {}",
                self.k
            )));
        }
        let mut scores = HashMap::new();
        for token in universe {
            let key = TokenVecKey::of(token);
            if let Entry::Vacant(slot) = scores.entry(key) {
                slot.insert(self.phi_forward(token)?[0]);
            }
        }
        Ok(TokenScoreTable {
            scores,
            rho_calibrator: self.rho_calibrators[0].clone(),
            rho_lattice: self.rho_lattice.clone(),
            output_calibrator: self.output_calibrator.clone(),
        })
    }
}

impl TokenScoreTable {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, token: &[Option<f64>]) -> Option<f64> {
        self.scores.get(&TokenVecKey::of(token)).copied()
    }

    /// Looks up each token's stored score, averages, and applies `rho`.
    pub fn score(&self, tokens: &[Token]) -> Result<f64> {
        if tokens.is_empty() {
            return Err(Error::Shape("example has no tokens".into()));
        }
        let phis = tokens
            .iter()
            .map(|t| self.get(t).map(|s| vec![s]).ok_or(Error::MissingToken))
            .collect::<Result<Vec<_>>>()?;
        let mean = AggModel::pool(&phis, 1)[0];
        let u = self.rho_calibrator.eval(mean);
        let z = self.rho_lattice.interpolate(&[u])?;
        Ok(self.output_calibrator.eval(z))
    }

    /// `(token, score)` pairs sorted by key.
    pub fn entries(&self) -> Vec<(&TokenVecKey, f64)> {
        let mut v: Vec<_> = self.scores.iter().map(|(k, &s)| (k, s)).collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }
}
