//! Line-oriented text form of a [`ConicProblem`] for diffing against other
//! solvers.
//!
//! ```text
//! conic-problem dim=3
//! objective 0,0:1 1,2:-0.5
//! eq b=1 0,0:1
//! soc 2,0:1 | 1,0:1 | 0,0:-2
//! ```
//!
//! Matrix lines list upper-triangular entries `i,j:value` of a symmetric
//! matrix. A `soc` line lists the right-hand linear form, then each selector
//! row after a `|`; coefficients multiply `H[i,j]`.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use super::{vec_position, ConicProblem, Equality, LinearForm, SocRow};
use crate::error::{Error, Result};

fn write_matrix(out: &mut String, m: &DMatrix<f64>) {
    for j in 0..m.ncols() {
        for i in 0..=j {
            let v = m[(i, j)];
            if v != 0.0 {
                let _ = write!(out, " {i},{j}:{v:e}");
            }
        }
    }
}

fn write_form(out: &mut String, f: &LinearForm) {
    for &(k, c) in &f.0 {
        let (i, j) = vec_position(k);
        let _ = write!(out, " {i},{j}:{c:e}");
    }
}

pub fn write_problem(p: &ConicProblem) -> String {
    let mut out = format!("conic-problem dim={}\nobjective", p.dim);
    write_matrix(&mut out, &p.objective);
    out.push('\n');
    for eq in &p.equalities {
        let _ = write!(out, "eq b={:e}", eq.b);
        write_matrix(&mut out, &eq.a);
        out.push('\n');
    }
    for soc in &p.socs {
        out.push_str("soc");
        write_form(&mut out, &soc.rhs);
        for row in &soc.selector {
            out.push_str(" |");
            write_form(&mut out, row);
        }
        out.push('\n');
    }
    out
}

fn parse_term(tok: &str, dim: usize) -> Result<(usize, usize, f64)> {
    let bad = || Error::InvalidInput(format!("malformed term {tok:?}"));
    let (idx, val) = tok.split_once(':').ok_or_else(bad)?;
    let (i, j) = idx.split_once(',').ok_or_else(bad)?;
    let i: usize = i.parse().map_err(|_| bad())?;
    let j: usize = j.parse().map_err(|_| bad())?;
    let v: f64 = val.parse().map_err(|_| bad())?;
    if i >= dim || j >= dim {
        return Err(Error::InvalidInput(format!("index out of range in {tok:?}")));
    }
    Ok((i, j, v))
}

fn parse_matrix<'a>(toks: impl Iterator<Item = &'a str>, dim: usize) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(dim, dim);
    for tok in toks {
        let (i, j, v) = parse_term(tok, dim)?;
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    Ok(m)
}

fn parse_form<'a>(toks: impl Iterator<Item = &'a str>, dim: usize) -> Result<LinearForm> {
    let mut f = LinearForm::new();
    for tok in toks {
        let (i, j, v) = parse_term(tok, dim)?;
        f.add(i, j, v);
    }
    Ok(f)
}

pub fn parse_problem(text: &str) -> Result<ConicProblem> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidInput("empty problem text".into()))?;
    let dim: usize = header
        .strip_prefix("conic-problem dim=")
        .and_then(|d| d.trim().parse().ok())
        .ok_or_else(|| Error::InvalidInput(format!("bad header {header:?}")))?;

    let mut problem = ConicProblem::new(DMatrix::zeros(dim, dim));
    for line in lines {
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("objective") => problem.objective = parse_matrix(toks, dim)?,
            Some("eq") => {
                let b = toks
                    .next()
                    .and_then(|t| t.strip_prefix("b="))
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::InvalidInput(format!("bad equality line {line:?}")))?;
                problem.equalities.push(Equality {
                    a: parse_matrix(toks, dim)?,
                    b,
                });
            }
            Some("soc") => {
                let rest = line.trim_start().trim_start_matches("soc");
                let mut parts = rest.split('|');
                let rhs = parse_form(parts.next().unwrap_or("").split_whitespace(), dim)?;
                let selector = parts
                    .map(|p| parse_form(p.split_whitespace(), dim))
                    .collect::<Result<Vec<_>>>()?;
                problem.socs.push(SocRow { rhs, selector });
            }
            _ => return Err(Error::InvalidInput(format!("unrecognized line {line:?}"))),
        }
    }
    Ok(problem)
}
