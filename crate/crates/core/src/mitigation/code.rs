use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gf256;
use crate::error::{Error, Result};

/// Two-path linear code over GF(256): `Y = E·X`, the first `n_l` symbols of `Y`
/// go via `l`, the remaining `n_m` via `m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecureCode {
    pub n_l: usize,
    pub n_m: usize,
    /// `r × r` encoding matrix, row-major.
    pub matrix: Vec<Vec<u8>>,
}

/// Vandermonde code on `r = n_l + n_m` distinct random nonzero field elements.
pub fn generate_code<R: Rng + ?Sized>(n_l: usize, n_m: usize, rng: &mut R) -> Result<SecureCode> {
    if n_l == 0 || n_m == 0 {
        return Err(Error::InvalidCode(format!(
            "split ({n_l}, {n_m}) lets one relay see every symbol"
        )));
    }
    let r = n_l + n_m;
    if r > 255 {
        return Err(Error::InvalidCode(format!(
            "dimension {r} exceeds the 255 nonzero elements of GF(256)"
        )));
    }
    let points = sample(rng, 255, r);
    let matrix = points
        .iter()
        .map(|p| {
            let x = (p + 1) as u8;
            (0..r).map(|j| gf256::pow(x, j)).collect()
        })
        .collect();
    Ok(SecureCode { n_l, n_m, matrix })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub via_l: Vec<u8>,
    pub via_m: Vec<u8>,
}

impl SecureCode {
    pub fn dimension(&self) -> usize {
        self.n_l + self.n_m
    }

    /// Rows whose symbols travel through `l`.
    pub fn rows_l(&self) -> &[Vec<u8>] {
        &self.matrix[..self.n_l]
    }

    pub fn rows_m(&self) -> &[Vec<u8>] {
        &self.matrix[self.n_l..]
    }

    /// `max(dim V_l, dim V_m) < r` and `E` has full rank.
    pub fn is_secure(&self) -> bool {
        let r = self.dimension();
        gf256::rank(&self.matrix) == r
            && gf256::rank(self.rows_l()).max(gf256::rank(self.rows_m())) < r
    }

    pub fn encode(&self, x: &[u8]) -> Result<Encoded> {
        let r = self.dimension();
        if x.len() != r {
            return Err(Error::SymbolCount {
                expected: r,
                got: x.len(),
            });
        }
        let y: Vec<u8> = self
            .matrix
            .iter()
            .map(|row| row.iter().zip(x).fold(0, |acc, (&e, &v)| acc ^ gf256::mul(e, v)))
            .collect();
        Ok(Encoded {
            via_l: y[..self.n_l].to_vec(),
            via_m: y[self.n_l..].to_vec(),
        })
    }

    /// Recover `X` from the received symbols, `None` marking symbols that did not arrive.
    ///
    /// With missing symbols the observed rows leave `256^nullity` candidate
    /// messages, reported through [`Error::InsufficientSymbols`].
    pub fn decode(&self, y: &[Option<u8>]) -> Result<Vec<u8>> {
        let r = self.dimension();
        if y.len() != r {
            return Err(Error::SymbolCount {
                expected: r,
                got: y.len(),
            });
        }
        let observed: Vec<usize> = (0..r).filter(|&i| y[i].is_some()).collect();
        if observed.len() < r {
            let rows: Vec<Vec<u8>> = observed.iter().map(|&i| self.matrix[i].clone()).collect();
            return Err(Error::InsufficientSymbols {
                observed: observed.len(),
                dimension: r,
                nullity: r - gf256::rank(&rows),
            });
        }
        // Gauss-Jordan on [E | Y].
        let mut m: Vec<Vec<u8>> = self
            .matrix
            .iter()
            .zip(y)
            .map(|(row, v)| {
                let mut row = row.clone();
                row.push(v.unwrap());
                row
            })
            .collect();
        for c in 0..r {
            let p = (c..r).find(|&i| m[i][c] != 0).ok_or(Error::Singular)?;
            m.swap(c, p);
            let pinv = gf256::inv(m[c][c]);
            for v in m[c].iter_mut() {
                *v = gf256::mul(*v, pinv);
            }
            for i in 0..r {
                if i != c && m[i][c] != 0 {
                    let f = m[i][c];
                    for j in c..=r {
                        let t = gf256::mul(f, m[c][j]);
                        m[i][j] ^= t;
                    }
                }
            }
        }
        Ok(m.into_iter().map(|row| row[r]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn full(e: &Encoded) -> Vec<Option<u8>> {
        e.via_l.iter().chain(&e.via_m).map(|&v| Some(v)).collect()
    }

    #[test]
    fn two_by_two_example() {
        let code = SecureCode {
            n_l: 1,
            n_m: 1,
            matrix: vec![vec![1, 1], vec![1, 2]],
        };
        let y = code.encode(&[5, 7]).unwrap();
        // 5 ^ 7 = 2 and 5 ^ (2·7) = 5 ^ 14 = 11
        assert_eq!(y.via_l, vec![2]);
        assert_eq!(y.via_m, vec![11]);
        assert_eq!(code.decode(&full(&y)).unwrap(), vec![5, 7]);
    }

    #[test]
    fn zero_message_encodes_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let code = generate_code(3, 2, &mut rng).unwrap();
        let y = code.encode(&[0; 5]).unwrap();
        assert!(y.via_l.iter().chain(&y.via_m).all(|&v| v == 0));
    }

    #[test]
    fn rejects_bad_splits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(generate_code(3, 0, &mut rng), Err(Error::InvalidCode(_))));
        assert!(matches!(generate_code(0, 2, &mut rng), Err(Error::InvalidCode(_))));
        assert!(generate_code(200, 56, &mut rng).is_err());
        assert!(generate_code(200, 55, &mut rng).is_ok());
    }

    #[test]
    fn partial_observation_leaves_ambiguity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let code = generate_code(2, 1, &mut rng).unwrap();
        let y = full(&code.encode(&[9, 8, 7]).unwrap());
        let only_l = vec![y[0], y[1], None];
        assert!(matches!(
            code.decode(&only_l),
            Err(Error::InsufficientSymbols { observed: 2, dimension: 3, nullity: 1 })
        ));
        let only_m = vec![None, None, y[2]];
        assert!(matches!(
            code.decode(&only_m),
            Err(Error::InsufficientSymbols { nullity: 2, .. })
        ));
        assert!(matches!(code.decode(&y[..2]), Err(Error::SymbolCount { .. })));
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(seed in any::<u64>(), n_l in 1usize..8, n_m in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let code = generate_code(n_l, n_m, &mut rng).unwrap();
            prop_assert!(code.is_secure());
            let x: Vec<u8> = (0..n_l + n_m).map(|_| rng.random()).collect();
            let y = code.encode(&x).unwrap();
            prop_assert_eq!(code.decode(&full(&y)).unwrap(), x);
        }
    }
}
