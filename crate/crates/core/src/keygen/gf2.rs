//! Incremental Gaussian elimination over GF(2) with provenance tracking.

/// Dense bit vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Bits(Vec<u64>);

impl Bits {
    pub fn zeros(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn flip(&mut self, i: usize) {
        self.0[i / 64] ^= 1 << (i % 64);
    }

    pub fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    pub fn xor(&mut self, other: &Bits) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a ^= b;
        }
    }

    pub fn first_one(&self) -> Option<usize> {
        self.0
            .iter()
            .enumerate()
            .find(|(_, w)| **w != 0)
            .map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().flat_map(|(i, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(i * 64 + b)
            })
        })
    }
}

#[derive(Debug, Clone)]
struct Row {
    coeffs: Bits,
    rhs: bool,
    /// Soft rows this row was combined from.
    prov: Bits,
}

/// Row-echelon system. Each pivot row is zero at the pivot columns of all
/// earlier rows, so a new row is reduced by one pass in insertion order.
#[derive(Debug, Clone)]
pub(crate) struct System {
    vars: usize,
    softs: usize,
    rows: Vec<(usize, Row)>,
}

impl System {
    pub fn new(vars: usize, softs: usize) -> Self {
        System {
            vars,
            softs,
            rows: Vec::new(),
        }
    }

    #[cfg(test)]
    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    fn reduce(&self, row: &mut Row) {
        for (col, p) in &self.rows {
            if row.coeffs.get(*col) {
                row.coeffs.xor(&p.coeffs);
                row.rhs ^= p.rhs;
                row.prov.xor(&p.prov);
            }
        }
    }

    /// Adds `sum(vars) = rhs`. Returns the soft rows in conflict, if the
    /// equation contradicts the system; hard-only conflicts give an empty core.
    pub fn add(&mut self, vars: &[usize], rhs: bool, soft: Option<usize>) -> Result<(), Vec<usize>> {
        let mut row = Row {
            coeffs: Bits::zeros(self.vars),
            rhs,
            prov: Bits::zeros(self.softs),
        };
        for &v in vars {
            row.coeffs.flip(v);
        }
        if let Some(s) = soft {
            row.prov.set(s);
        }
        self.reduce(&mut row);
        match row.coeffs.first_one() {
            Some(col) => {
                self.rows.push((col, row));
                Ok(())
            }
            None if row.rhs => Err(row.prov.ones().collect()),
            None => Ok(()),
        }
    }

    /// An assignment satisfying every row, with non-pivot variables taken
    /// from `free`.
    pub fn solve(&self, free: impl Fn(usize) -> bool) -> Vec<bool> {
        let mut pivot = vec![false; self.vars];
        for (c, _) in &self.rows {
            pivot[*c] = true;
        }
        let mut x: Vec<bool> = (0..self.vars).map(|v| !pivot[v] && free(v)).collect();
        // a pivot row only mentions later pivots and free variables
        for (col, row) in self.rows.iter().rev() {
            let mut v = row.rhs;
            for c in row.coeffs.ones() {
                if c != *col {
                    v ^= x[c];
                }
            }
            x[*col] = v;
        }
        x
    }
}
