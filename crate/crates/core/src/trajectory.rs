//! Sampled trajectories with piecewise-polynomial dense output.

use crate::error::{Error, Result};
use crate::model::ProductState;
use crate::radau::lagrange_weights;

/// One interpolation piece on `[start, start + width]`. States and control
/// carry separate node sets, both in local coordinates on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Piece {
    pub start: f64,
    pub width: f64,
    /// Last time this piece answers for; may cut the polynomial short.
    pub end: f64,
    pub state_nodes: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub control_nodes: Vec<f64>,
    pub controls: Vec<f64>,
}

impl Piece {
    pub fn new(
        start: f64,
        width: f64,
        state_nodes: Vec<f64>,
        states: Vec<Vec<f64>>,
        control_nodes: Vec<f64>,
        controls: Vec<f64>,
    ) -> Self {
        Piece {
            start,
            width,
            end: start + width,
            state_nodes,
            states,
            control_nodes,
            controls,
        }
    }

    fn local(&self, t: f64) -> f64 {
        if self.width > 0.0 {
            (t - self.start) / self.width
        } else {
            0.0
        }
    }

    pub fn state_into(&self, t: f64, out: &mut [f64]) {
        let w = lagrange_weights(&self.state_nodes, self.local(t));
        out.iter_mut().for_each(|v| *v = 0.0);
        for (wk, xk) in w.iter().zip(&self.states) {
            for (o, x) in out.iter_mut().zip(xk) {
                *o += wk * x;
            }
        }
    }

    pub fn control(&self, t: f64) -> f64 {
        let w = lagrange_weights(&self.control_nodes, self.local(t));
        w.iter().zip(&self.controls).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    controls: Vec<f64>,
    pieces: Vec<Piece>,
}

impl Trajectory {
    pub fn new(t0: f64, x0: Vec<f64>, tb0: f64) -> Self {
        Trajectory {
            times: vec![t0],
            states: vec![x0],
            controls: vec![tb0],
            pieces: Vec::new(),
        }
    }

    pub fn push_sample(&mut self, t: f64, x: Vec<f64>, tb: f64) {
        debug_assert!(t > *self.times.last().expect("non-empty"), "times must increase");
        self.times.push(t);
        self.states.push(x);
        self.controls.push(tb);
    }

    pub fn push_piece(&mut self, piece: Piece) {
        self.pieces.push(piece);
    }

    /// Concatenates `next`, whose first sample replaces this trajectory's last
    /// one when the times coincide.
    pub fn append(&mut self, next: Trajectory) {
        let mut skip = 0;
        if let Some(&start) = next.times.first() {
            for p in self.pieces.iter_mut().rev().take_while(|p| p.end > start) {
                p.end = start;
            }
        }
        if let (Some(&end), Some(&start)) = (self.times.last(), next.times.first()) {
            if start <= end {
                self.times.pop();
                self.states.pop();
                self.controls.pop();
            }
        }
        for ((t, x), u) in next.times.into_iter().zip(next.states).zip(next.controls) {
            if let Some(&last) = self.times.last() {
                if t <= last {
                    skip += 1;
                    continue;
                }
            }
            self.times.push(t);
            self.states.push(x);
            self.controls.push(u);
        }
        debug_assert_eq!(skip, 0);
        self.pieces.extend(next.pieces);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn controls(&self) -> &[f64] {
        &self.controls
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }

    pub fn last_state(&self) -> &[f64] {
        self.states.last().expect("non-empty")
    }

    pub fn last_control(&self) -> f64 {
        *self.controls.last().expect("non-empty")
    }

    pub fn product_state(&self, i: usize) -> ProductState {
        ProductState::from_slice(&self.states[i])
    }

    fn piece_at(&self, t: f64) -> Option<&Piece> {
        let idx = self.pieces.partition_point(|p| p.end < t);
        self.pieces.get(idx).filter(|p| p.start <= t)
    }

    fn check_range(&self, t: f64) -> Result<()> {
        if !(t >= self.t_start() && t <= self.t_end()) {
            return Err(Error::Range {
                t,
                start: self.t_start(),
                end: self.t_end(),
            });
        }
        Ok(())
    }

    fn exact_sample(&self, t: f64) -> Option<usize> {
        let i = self.times.partition_point(|&s| s < t);
        (i < self.times.len() && self.times[i] == t).then_some(i)
    }

    /// Raw state vector and control at `t`.
    pub fn dense(&self, t: f64) -> Result<(Vec<f64>, f64)> {
        self.check_range(t)?;
        if let Some(i) = self.exact_sample(t) {
            return Ok((self.states[i].clone(), self.controls[i]));
        }
        let piece = self.piece_at(t).ok_or(Error::Range {
            t,
            start: self.t_start(),
            end: self.t_end(),
        })?;
        let mut x = vec![0.0; self.states[0].len()];
        piece.state_into(t, &mut x);
        Ok((x, piece.control(t)))
    }

    /// Drops everything after `t`, ending on an interpolated sample at `t`.
    pub fn truncate_at(&mut self, t: f64) -> Result<()> {
        self.check_range(t)?;
        let (x, u) = self.dense(t)?;
        let keep = self.times.partition_point(|&s| s < t);
        self.times.truncate(keep);
        self.states.truncate(keep);
        self.controls.truncate(keep);
        self.times.push(t);
        self.states.push(x);
        self.controls.push(u);
        self.pieces.retain(|p| p.start < t || (p.start == t && p.width == 0.0));
        if let Some(p) = self.pieces.last_mut() {
            p.end = p.end.min(t);
        }
        Ok(())
    }

    pub fn dense_eval(&self, t: f64) -> Result<(ProductState, f64)> {
        let (x, u) = self.dense(t)?;
        Ok((ProductState::from_slice(&x), u))
    }

    pub fn control_at(&self, t: f64) -> Result<f64> {
        self.check_range(t)?;
        if let Some(i) = self.exact_sample(t) {
            return Ok(self.controls[i]);
        }
        self.piece_at(t)
            .map(|p| p.control(t))
            .ok_or(Error::Range {
                t,
                start: self.t_start(),
                end: self.t_end(),
            })
    }
}
