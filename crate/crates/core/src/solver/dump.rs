//! Plain-text problem dumps for cross-checking against external solvers.
//!
//! LP layout, one item per line:
//!
//! ```text
//! # lp-dump v1
//! n <variables>
//! c <n values>
//! q <n values, or nothing>
//! lower <n values>          (may contain -inf)
//! upper <n values>          (may contain inf)
//! a_eq <rows> <nonzeros>    followed by <nonzeros> lines "row col value"
//! b_eq <rows values>
//! a_ineq <rows> <nonzeros>  followed by <nonzeros> lines "row col value"
//! b_ineq <rows values>
//! ```
//!
//! The QCQP dump is the dense analogue with sections `c`, `q` (row-major),
//! `l`, `r`, `a_ineq` (row-major, prefixed by the row count) and `b_ineq`.

use std::io::{BufRead, BufReader, Read, Write};

use super::lp::LinearProgram;
use super::qcqp::QcqpProblem;
use super::sparse::SparseMatrix;

const LP_SCHEMA: &str = "# lp-dump v1";
const QCQP_SCHEMA: &str = "# qcqp-dump v1";

#[derive(Debug, thiserror::Error)]
pub enum DumpError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

fn join(v: impl IntoIterator<Item = f64>) -> String {
    v.into_iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ")
}

fn write_sparse<W: Write>(out: &mut W, name: &str, m: &SparseMatrix) -> std::io::Result<()> {
    writeln!(out, "{name} {} {}", m.nrows(), m.nnz())?;
    for (i, row) in m.rows().enumerate() {
        for (j, v) in row {
            writeln!(out, "{i} {j} {v}")?;
        }
    }
    Ok(())
}

pub fn write_lp_dump<W: Write>(mut out: W, p: &LinearProgram) -> Result<(), DumpError> {
    writeln!(out, "{LP_SCHEMA}")?;
    writeln!(out, "n {}", p.n())?;
    writeln!(out, "c {}", join(p.c.iter().copied()))?;
    writeln!(out, "q {}", join(p.q.iter().copied()))?;
    writeln!(out, "lower {}", join(p.lower.iter().copied()))?;
    writeln!(out, "upper {}", join(p.upper.iter().copied()))?;
    write_sparse(&mut out, "a_eq", &p.a_eq)?;
    writeln!(out, "b_eq {}", join(p.b_eq.iter().copied()))?;
    write_sparse(&mut out, "a_ineq", &p.a_ineq)?;
    writeln!(out, "b_ineq {}", join(p.b_ineq.iter().copied()))?;
    Ok(())
}

pub fn write_qcqp_dump<W: Write>(mut out: W, p: &QcqpProblem) -> Result<(), DumpError> {
    writeln!(out, "{QCQP_SCHEMA}")?;
    writeln!(out, "n {}", p.n())?;
    writeln!(out, "c {}", join(p.c.iter().copied()))?;
    writeln!(out, "q {}", join(p.q.transpose().iter().copied()))?;
    writeln!(out, "l {}", join(p.l.iter().copied()))?;
    writeln!(out, "r {}", p.r)?;
    writeln!(out, "a_ineq {} {}", p.a_ineq.nrows(), join(p.a_ineq.transpose().iter().copied()))?;
    writeln!(out, "b_ineq {}", join(p.b_ineq.iter().copied()))?;
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<BufReader<R>>,
    line: usize,
}

impl<R: Read> Lines<R> {
    fn next_line(&mut self) -> Result<String, DumpError> {
        self.line += 1;
        match self.inner.next() {
            Some(l) => Ok(l?),
            None => Err(self.err("unexpected end of file")),
        }
    }

    fn err(&self, msg: impl Into<String>) -> DumpError {
        DumpError::Parse {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn section(&mut self, name: &str) -> Result<Vec<String>, DumpError> {
        let l = self.next_line()?;
        let mut parts = l.split_whitespace().map(str::to_string);
        match parts.next() {
            Some(n) if n == name => Ok(parts.collect()),
            other => Err(self.err(format!("expected section `{name}`, found {other:?}"))),
        }
    }

    fn floats(&mut self, name: &str, len: Option<usize>) -> Result<Vec<f64>, DumpError> {
        let parts = self.section(name)?;
        let vals = parts
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| self.err(format!("{name}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(len) = len {
            if vals.len() != len {
                return Err(self.err(format!("{name}: expected {len} values, found {}", vals.len())));
            }
        }
        Ok(vals)
    }

    fn sparse(&mut self, name: &str, ncols: usize) -> Result<SparseMatrix, DumpError> {
        let head = self.section(name)?;
        let parse = |s: &String| s.parse::<usize>();
        let (rows, nnz) = match head.as_slice() {
            [r, z] => (parse(r).map_err(|e| self.err(e.to_string()))?, parse(z).map_err(|e| self.err(e.to_string()))?),
            _ => return Err(self.err(format!("{name}: expected `<rows> <nonzeros>`"))),
        };
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
        for _ in 0..nnz {
            let l = self.next_line()?;
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 3 {
                return Err(self.err("expected `row col value`"));
            }
            let i: usize = f[0].parse().map_err(|_| self.err("bad row index"))?;
            let j: usize = f[1].parse().map_err(|_| self.err("bad column index"))?;
            let v: f64 = f[2].parse().map_err(|_| self.err("bad value"))?;
            if i >= rows || j >= ncols {
                return Err(self.err("index out of range"));
            }
            per_row[i].push((j, v));
        }
        let mut m = SparseMatrix::new(ncols);
        for r in per_row {
            m.push_row(r);
        }
        Ok(m)
    }
}

pub fn read_lp_dump<R: Read>(input: R) -> Result<LinearProgram, DumpError> {
    let mut lines = Lines {
        inner: BufReader::new(input).lines(),
        line: 0,
    };
    if lines.next_line()?.trim() != LP_SCHEMA {
        return Err(lines.err(format!("expected `{LP_SCHEMA}`")));
    }
    let n = match lines.section("n")?.as_slice() {
        [v] => v.parse::<usize>().map_err(|e| lines.err(e.to_string()))?,
        _ => return Err(lines.err("expected `n <count>`")),
    };
    let c = lines.floats("c", Some(n))?;
    let q = lines.floats("q", None)?;
    let lower = lines.floats("lower", Some(n))?;
    let upper = lines.floats("upper", Some(n))?;
    let a_eq = lines.sparse("a_eq", n)?;
    let b_eq = lines.floats("b_eq", Some(a_eq.nrows()))?;
    let a_ineq = lines.sparse("a_ineq", n)?;
    let b_ineq = lines.floats("b_ineq", Some(a_ineq.nrows()))?;
    Ok(LinearProgram {
        c,
        q,
        a_eq,
        b_eq,
        a_ineq,
        b_ineq,
        lower,
        upper,
    })
}

pub fn read_qcqp_dump<R: Read>(input: R) -> Result<QcqpProblem, DumpError> {
    use nalgebra::{DMatrix, DVector};
    let mut lines = Lines {
        inner: BufReader::new(input).lines(),
        line: 0,
    };
    if lines.next_line()?.trim() != QCQP_SCHEMA {
        return Err(lines.err(format!("expected `{QCQP_SCHEMA}`")));
    }
    let n = match lines.section("n")?.as_slice() {
        [v] => v.parse::<usize>().map_err(|e| lines.err(e.to_string()))?,
        _ => return Err(lines.err("expected `n <count>`")),
    };
    let c = lines.floats("c", Some(n))?;
    let q = lines.floats("q", Some(n * n))?;
    let l = lines.floats("l", Some(n))?;
    let r = lines.floats("r", Some(1))?[0];
    let a = lines.floats("a_ineq", None)?;
    let rows = a.first().copied().unwrap_or(-1.0);
    if rows < 0.0 || rows.fract() != 0.0 || a.len() != 1 + rows as usize * n {
        return Err(lines.err("a_ineq: expected `<rows>` followed by rows * n values"));
    }
    let m = rows as usize;
    let b = lines.floats("b_ineq", Some(m))?;
    Ok(QcqpProblem {
        c: DVector::from_vec(c),
        q: DMatrix::from_row_slice(n, n, &q),
        l: DVector::from_vec(l),
        r,
        a_ineq: DMatrix::from_row_slice(m, n, &a[1..]),
        b_ineq: DVector::from_vec(b),
    })
}
