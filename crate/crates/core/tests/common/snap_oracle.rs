//! Reference stack interpreter that manipulates a literal list of tensor
//! names, used to cross-check validation and graph compilation.

use autosnap::snap::{build_block_graph, validate, SnapSequence, SnapSymbol};

pub struct OracleReport {
    pub checked: usize,
    pub validity_disagreements: usize,
    pub graph_disagreements: usize,
}

/// Returns `Some((final stack size, node count))` for a valid sequence,
/// `None` at the first underflow.
fn interpret(tokens: &[&str]) -> Option<(usize, usize)> {
    if tokens.is_empty() || tokens.len() > 12 {
        return None;
    }
    let mut nodes: Vec<String> = vec!["input0".into(), "input1".into()];
    let mut stack: Vec<String> = vec!["input0".into(), "input1".into()];
    for tok in tokens {
        match *tok {
            "B" => {
                let top = stack.last()?.clone();
                stack.push(top);
            }
            "X" => {
                let a = stack.pop()?;
                let b = stack.pop()?;
                stack.push(a);
                stack.push(b);
            }
            "M" => {
                let a = stack.pop()?;
                let b = stack.pop()?;
                let name = format!("proj({a},{b})#{}", nodes.len());
                nodes.push(name.clone());
                stack.push(name);
            }
            layer => {
                let a = stack.pop()?;
                let name = format!("{layer}({a})#{}", nodes.len());
                nodes.push(name.clone());
                stack.push(name);
            }
        }
    }
    let final_size = stack.len();
    while stack.len() > 1 {
        let a = stack.pop()?;
        let b = stack.pop()?;
        let name = format!("add({a},{b})#{}", nodes.len());
        nodes.push(name.clone());
        stack.push(name);
    }
    Some((final_size, nodes.len()))
}

/// Every sequence of length 1..=max_len over the eight tokens.
pub fn run(max_len: usize) -> OracleReport {
    const TOKENS: [&str; 8] = ["C1", "C3", "D3", "S3", "P3", "B", "X", "M"];
    let mut report = OracleReport {
        checked: 0,
        validity_disagreements: 0,
        graph_disagreements: 0,
    };
    for len in 1..=max_len {
        let mut digits = vec![0usize; len];
        loop {
            let tokens: Vec<&str> = digits.iter().map(|d| TOKENS[*d]).collect();
            let seq = SnapSequence::new(digits.iter().map(|d| SnapSymbol::ALL[*d]).collect());
            let expected = interpret(&tokens);
            let got = validate(&seq);
            report.checked += 1;
            match expected {
                None if got.valid => report.validity_disagreements += 1,
                None => {}
                Some((size, count)) => {
                    if !got.valid || got.final_stack != size {
                        report.validity_disagreements += 1;
                    }
                    match build_block_graph(&seq) {
                        Ok(g) if g.len() == count => {}
                        _ => report.graph_disagreements += 1,
                    }
                }
            }
            // odometer increment
            let mut i = 0;
            while i < len {
                digits[i] += 1;
                if digits[i] < TOKENS.len() {
                    break;
                }
                digits[i] = 0;
                i += 1;
            }
            if i == len {
                break;
            }
        }
    }
    report
}
