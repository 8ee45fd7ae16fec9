//! Model checkpoints as line-oriented text.
//!
//! ```text
//! graff-lp-checkpoint 1
//! config {"kind":"graff",...}
//! input_dim 7
//! tensor encoder.weight 7 64
//! <row 0: 64 space-separated reals>
//! ...
//! ```
//!
//! Tensors appear in the model's canonical parameter order, followed by the
//! batch-norm running statistics as `bn_running.<k>.mean` / `.var` (1 × d).
//! Reals are written in shortest round-trip form, so loading is exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{GraffConfig, Model};
use crate::optim::ParamTensors;
use crate::tensor::Tensor2;

pub const CHECKPOINT_MAGIC: &str = "graff-lp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

fn push_tensor(out: &mut String, name: &str, t: &Tensor2) {
    let _ = writeln!(out, "tensor {name} {} {}", t.rows(), t.cols());
    for r in 0..t.rows() {
        let row: Vec<String> = t.row(r).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

pub fn checkpoint_to_string(model: &Model) -> Result<String> {
    let mut out = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n");
    let _ = writeln!(out, "config {}", serde_json::to_string(&model.cfg)?);
    let _ = writeln!(out, "input_dim {}", model.input_dim());
    for (name, t) in model.params.tensors() {
        push_tensor(&mut out, &name, t);
    }
    for (k, run) in model.bn_running.iter().enumerate() {
        push_tensor(&mut out, &format!("bn_running.{k}.mean"), &Tensor2::row_vector(&run.mean));
        push_tensor(&mut out, &format!("bn_running.{k}.var"), &Tensor2::row_vector(&run.var));
    }
    Ok(out)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text, path)
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, line: usize, reason: impl ToString) -> Error {
        Error::parse("checkpoint", self.path, format!("line {}: {}", line + 1, reason.to_string()))
    }

    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .ok_or_else(|| Error::parse("checkpoint", self.path, "unexpected end of file"))
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (k, line) = self.next_line()?;
        match line.split_once(' ') {
            Some((head, rest)) if head == key => Ok((k, rest)),
            _ => Err(self.err(k, format!("expected `{key} ...`"))),
        }
    }

    fn tensor(&mut self, name: &str, rows: usize, cols: usize) -> Result<Tensor2> {
        let (k, rest) = self.keyed("tensor")?;
        let fields: Vec<&str> = rest.split_whitespace().collect();
        let shape_ok = fields.len() == 3
            && fields[0] == name
            && fields[1].parse() == Ok(rows)
            && fields[2].parse() == Ok(cols);
        if !shape_ok {
            return Err(self.err(k, format!("expected tensor {name} {rows} {cols}, found `{rest}`")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (k, line) = self.next_line()?;
            let before = data.len();
            for v in line.split_whitespace() {
                data.push(v.parse::<f64>().map_err(|e| self.err(k, e))?);
            }
            if data.len() - before != cols {
                return Err(self.err(k, format!("row of {name} has {} values, expected {cols}", data.len() - before)));
            }
        }
        Tensor2::from_vec(rows, cols, data)
    }
}

pub fn checkpoint_from_str(text: &str, path: &Path) -> Result<Model> {
    let mut rd = Reader {
        lines: text.lines().enumerate(),
        path,
    };
    let (k, header) = rd.next_line()?;
    match header.split_once(' ') {
        Some((CHECKPOINT_MAGIC, v)) if v.trim().parse() == Ok(CHECKPOINT_VERSION) => {}
        _ => return Err(rd.err(k, format!("expected `{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}` header"))),
    }
    let (k, cfg_json) = rd.keyed("config")?;
    let cfg: GraffConfig = serde_json::from_str(cfg_json).map_err(|e| rd.err(k, e))?;
    let (k, dim) = rd.keyed("input_dim")?;
    let input_dim: usize = dim.trim().parse().map_err(|e| rd.err(k, e))?;

    // Build the layout from the config, then overwrite every tensor.
    let mut model = Model::new(cfg, input_dim, 0)?;
    let layout: Vec<(String, usize, usize)> = model
        .params
        .tensors()
        .iter()
        .map(|(n, t)| (n.clone(), t.rows(), t.cols()))
        .collect();
    for ((name, rows, cols), slot) in layout.iter().zip(model.params.tensors_mut()) {
        *slot = rd.tensor(name, *rows, *cols)?;
    }
    for (k, run) in model.bn_running.iter_mut().enumerate() {
        let d = run.mean.len();
        run.mean = rd.tensor(&format!("bn_running.{k}.mean"), 1, d)?.into_vec();
        run.var = rd.tensor(&format!("bn_running.{k}.var"), 1, d)?.into_vec();
    }
    if let Some((k, line)) = rd.lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(rd.err(k, format!("trailing content `{line}`")));
    }
    Ok(model)
}
