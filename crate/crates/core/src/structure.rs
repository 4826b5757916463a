//! Rank-structured matrices in the permuted (`Q` blocks first, landmarks
//! last) coordinate system.

use nalgebra::{DMatrix, DVector};

/// `blkdiag(D_1, …, D_m) + U Vᵀ` where block `l` occupies rows
/// `row_offsets[l]..row_offsets[l+1]` and the matching column range.
#[derive(Clone, Debug)]
pub struct BlockLowRank {
    pub row_offsets: Vec<usize>,
    pub col_offsets: Vec<usize>,
    pub blocks: Vec<DMatrix<f64>>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl BlockLowRank {
    /// Square structure with `blocks` on the diagonal and no low-rank part.
    pub fn block_diagonal(offsets: Vec<usize>, blocks: Vec<DMatrix<f64>>) -> Self {
        let n = *offsets.last().unwrap_or(&0);
        BlockLowRank {
            col_offsets: offsets.clone(),
            row_offsets: offsets,
            blocks,
            u: DMatrix::zeros(n, 0),
            v: DMatrix::zeros(n, 0),
        }
    }

    pub fn nrows(&self) -> usize {
        *self.row_offsets.last().unwrap_or(&0)
    }

    pub fn ncols(&self) -> usize {
        *self.col_offsets.last().unwrap_or(&0)
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Width of the low-rank factors.
    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn rows_of(&self, l: usize) -> (usize, usize) {
        (self.row_offsets[l], self.row_offsets[l + 1] - self.row_offsets[l])
    }

    pub fn cols_of(&self, l: usize) -> (usize, usize) {
        (self.col_offsets[l], self.col_offsets[l + 1] - self.col_offsets[l])
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.u * (self.v.tr_mul(x));
        for (l, d) in self.blocks.iter().enumerate() {
            let (r0, nr) = self.rows_of(l);
            let (c0, nc) = self.cols_of(l);
            let mut seg = out.rows_mut(r0, nr);
            seg.gemv(1.0, d, &x.rows(c0, nc), 1.0);
        }
        out
    }

    /// `self · X` for an `ncols × k` matrix.
    pub fn mul_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.u * (self.v.tr_mul(x));
        for (l, d) in self.blocks.iter().enumerate() {
            let (r0, nr) = self.rows_of(l);
            let (c0, nc) = self.cols_of(l);
            out.rows_mut(r0, nr).gemm(1.0, d, &x.rows(c0, nc), 1.0);
        }
        out
    }

    pub fn tr_mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.v * (self.u.tr_mul(x));
        for (l, d) in self.blocks.iter().enumerate() {
            let (r0, nr) = self.rows_of(l);
            let (c0, nc) = self.cols_of(l);
            let mut seg = out.rows_mut(c0, nc);
            seg.gemv_tr(1.0, d, &x.rows(r0, nr), 1.0);
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = &self.u * self.v.transpose();
        for (l, d) in self.blocks.iter().enumerate() {
            let (r0, nr) = self.rows_of(l);
            let (c0, nc) = self.cols_of(l);
            let mut view = out.view_mut((r0, c0), (nr, nc));
            view += d;
        }
        out
    }

    /// Only the block-diagonal part as a dense matrix.
    pub fn blocks_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows(), self.ncols());
        for (l, d) in self.blocks.iter().enumerate() {
            let (r0, nr) = self.rows_of(l);
            let (c0, nc) = self.cols_of(l);
            out.view_mut((r0, c0), (nr, nc)).copy_from(d);
        }
        out
    }

    pub fn trace(&self) -> f64 {
        let blocks: f64 = self.blocks.iter().map(|d| d.trace()).sum();
        blocks + self.u.dot(&self.v)
    }

    pub fn diagonal(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.nrows());
        for i in 0..self.nrows() {
            out[i] = self.u.row(i).dot(&self.v.row(i));
        }
        for (l, d) in self.blocks.iter().enumerate() {
            let (r0, _) = self.rows_of(l);
            for i in 0..d.nrows().min(d.ncols()) {
                out[r0 + i] += d[(i, i)];
            }
        }
        out
    }

    /// `tr(self · other)` for conformable square-compatible structures.
    pub fn trace_product(&self, other: &BlockLowRank) -> f64 {
        let mut t = 0.0;
        for (l, (sd, td)) in self.blocks.iter().zip(&other.blocks).enumerate() {
            t += sd.dot(&td.transpose());
            let (sr0, snr) = self.rows_of(l);
            let (sc0, snc) = self.cols_of(l);
            if other.rank() > 0 {
                let sdu = sd * other.u.rows(sc0, snc);
                t += sdu.dot(&other.v.rows(sr0, snr));
            }
            if self.rank() > 0 {
                let (tr0, tnr) = other.rows_of(l);
                let (tc0, tnc) = other.cols_of(l);
                let tdu = td * self.u.rows(tc0, tnc);
                t += tdu.dot(&self.v.rows(tr0, tnr));
            }
        }
        if self.rank() > 0 && other.rank() > 0 {
            let a = self.v.tr_mul(&other.u);
            let b = other.v.tr_mul(&self.u);
            t += a.dot(&b.transpose());
        }
        t
    }
}

/// Two-by-two permuted layout
/// `[[tl, tr], [bl, br]]` with `tl` over the non-landmark rows.
#[derive(Clone, Debug)]
pub struct Structured {
    pub tl: BlockLowRank,
    pub tr: DMatrix<f64>,
    pub bl: DMatrix<f64>,
    pub br: DMatrix<f64>,
}

impl Structured {
    pub fn nrows(&self) -> usize {
        self.tl.nrows() + self.bl.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.tl.ncols() + self.tr.ncols()
    }

    /// Width of the low-rank part of the upper-left block.
    pub fn lowrank_width(&self) -> usize {
        self.tl.rank()
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let nq = self.tl.ncols();
        let x1 = x.rows(0, nq).into_owned();
        let x2 = x.rows(nq, self.tr.ncols());
        let mut top = self.tl.mul_vec(&x1);
        top.gemv(1.0, &self.tr, &x2, 1.0);
        let mut bottom = &self.bl * &x1;
        bottom.gemv(1.0, &self.br, &x2, 1.0);
        let mut out = DVector::zeros(self.nrows());
        out.rows_mut(0, top.len()).copy_from(&top);
        out.rows_mut(top.len(), bottom.len()).copy_from(&bottom);
        out
    }

    /// `self · X` for an `ncols × k` matrix.
    pub fn mul_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let nq = self.tl.ncols();
        let x1 = x.rows(0, nq).into_owned();
        let x2 = x.rows(nq, self.tr.ncols());
        let mut top = self.tl.mul_mat(&x1);
        top.gemm(1.0, &self.tr, &x2, 1.0);
        let mut bottom = &self.bl * &x1;
        bottom.gemm(1.0, &self.br, &x2, 1.0);
        let mut out = DMatrix::zeros(self.nrows(), x.ncols());
        out.rows_mut(0, top.nrows()).copy_from(&top);
        out.rows_mut(top.nrows(), bottom.nrows()).copy_from(&bottom);
        out
    }

    pub fn tr_mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let nq = self.tl.nrows();
        let x1 = x.rows(0, nq).into_owned();
        let x2 = x.rows(nq, self.bl.nrows());
        let mut left = self.tl.tr_mul_vec(&x1);
        left.gemv_tr(1.0, &self.bl, &x2, 1.0);
        let mut right = self.tr.tr_mul(&x1);
        right.gemv_tr(1.0, &self.br, &x2, 1.0);
        let mut out = DVector::zeros(self.ncols());
        out.rows_mut(0, left.len()).copy_from(&left);
        out.rows_mut(left.len(), right.len()).copy_from(&right);
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let (nq, nc) = (self.tl.nrows(), self.tl.ncols());
        let mut out = DMatrix::zeros(self.nrows(), self.ncols());
        out.view_mut((0, 0), (nq, nc)).copy_from(&self.tl.to_dense());
        out.view_mut((0, nc), (nq, self.tr.ncols())).copy_from(&self.tr);
        out.view_mut((nq, 0), (self.bl.nrows(), nc)).copy_from(&self.bl);
        out.view_mut((nq, nc), (self.br.nrows(), self.br.ncols())).copy_from(&self.br);
        out
    }

    pub fn trace(&self) -> f64 {
        self.tl.trace() + self.br.trace()
    }

    /// `tr(self · other)` without forming either product.
    pub fn trace_product(&self, other: &Structured) -> f64 {
        self.tl.trace_product(&other.tl)
            + self.tr.dot(&other.bl.transpose())
            + self.bl.dot(&other.tr.transpose())
            + self.br.dot(&other.br.transpose())
    }
}
