//! Arithmetic in GF(2^8) with reduction polynomial x^8 + x^4 + x^3 + x + 1.

const POLY: u16 = 0x11b;

const fn tables() -> ([u8; 512], [u8; 256]) {
    let mut exp = [0u8; 512];
    let mut log = [0u8; 256];
    let mut x: u16 = 1;
    let mut i = 0;
    while i < 255 {
        exp[i] = x as u8;
        log[x as usize] = i as u8;
        // multiply by the generator 3 = x + 1
        let mut y = (x << 1) ^ x;
        if y & 0x100 != 0 {
            y ^= POLY;
        }
        x = y;
        i += 1;
    }
    while i < 512 {
        exp[i] = exp[i - 255];
        i += 1;
    }
    (exp, log)
}

const TABLES: ([u8; 512], [u8; 256]) = tables();
const EXP: [u8; 512] = TABLES.0;
const LOG: [u8; 256] = TABLES.1;

#[inline]
pub fn add(a: u8, b: u8) -> u8 {
    a ^ b
}

#[inline]
pub fn mul(a: u8, b: u8) -> u8 {
    if a == 0 || b == 0 {
        0
    } else {
        EXP[LOG[a as usize] as usize + LOG[b as usize] as usize]
    }
}

/// Multiplicative inverse. `inv(0)` is undefined and returns 0.
#[inline]
pub fn inv(a: u8) -> u8 {
    if a == 0 {
        0
    } else {
        EXP[255 - LOG[a as usize] as usize]
    }
}

pub fn pow(a: u8, e: usize) -> u8 {
    if e == 0 {
        return 1;
    }
    if a == 0 {
        return 0;
    }
    EXP[(LOG[a as usize] as usize * e) % 255]
}

/// Rank of a matrix over GF(256), by Gaussian elimination on a copy.
pub fn rank(rows: &[Vec<u8>]) -> usize {
    let mut m: Vec<Vec<u8>> = rows.to_vec();
    let cols = m.first().map_or(0, |r| r.len());
    let mut r = 0;
    for c in 0..cols {
        let Some(p) = (r..m.len()).find(|&i| m[i][c] != 0) else {
            continue;
        };
        m.swap(r, p);
        let pinv = inv(m[r][c]);
        for v in m[r].iter_mut() {
            *v = mul(*v, pinv);
        }
        for i in 0..m.len() {
            if i != r && m[i][c] != 0 {
                let f = m[i][c];
                for j in 0..cols {
                    let t = mul(f, m[r][j]);
                    m[i][j] ^= t;
                }
            }
        }
        r += 1;
        if r == m.len() {
            break;
        }
    }
    r
}

/// Determinant by elimination (characteristic 2, so row swaps do not flip the sign).
pub fn det(rows: &[Vec<u8>]) -> u8 {
    let n = rows.len();
    let mut m = rows.to_vec();
    let mut d = 1u8;
    for c in 0..n {
        let Some(p) = (c..n).find(|&i| m[i][c] != 0) else {
            return 0;
        };
        m.swap(c, p);
        d = mul(d, m[c][c]);
        let pinv = inv(m[c][c]);
        for i in c + 1..n {
            if m[i][c] != 0 {
                let f = mul(m[i][c], pinv);
                for j in c..n {
                    let t = mul(f, m[c][j]);
                    m[i][j] ^= t;
                }
            }
        }
    }
    d
}
