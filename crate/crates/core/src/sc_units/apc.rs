//! Approximate parallel counters.
//!
//! An APC adds the `i`-th bit of each of its `n` input streams into a small
//! binary count. The first level pairs inputs into AND/OR approximate gates
//! whose outputs carry weight 2 (AND undercounts a `01` pair by one, OR
//! overcounts it by one, so alternating them balances the error). The
//! improved variant sends the last pair through a half adder, which is exact.
//! Everything after the first level is an exact adder tree.
//!
//! The tree is compiled once into a netlist and evaluated bit-sliced: each
//! `u64` wire value holds 64 consecutive clock cycles.

use serde::{Deserialize, Serialize};

use crate::bitstream::BitStream;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApcVariant {
    /// AND/OR pairs only.
    Original,
    /// AND/OR pairs with the last pair in a half adder.
    Improved,
    /// No approximate unit; an exact full-adder parallel counter.
    Exact,
}

impl std::fmt::Display for ApcVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ApcVariant::Original => "original",
            ApcVariant::Improved => "improved",
            ApcVariant::Exact => "exact",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairGate {
    And,
    Or,
    HalfAdder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairUnit {
    pub a: usize,
    pub b: usize,
    pub gate: PairGate,
}

/// Physical polarity of the adder tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeLogic {
    /// Ordinary full/half adders.
    #[default]
    True,
    /// Inverse-output (mirror) adders: every gate emits complemented sum and
    /// carry, so alternate layers carry counts of zeros.
    Inverted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    And,
    Or,
    HalfAdder,
    FullAdder,
}

/// Input reference: wire index plus an XOR mask applied before the gate
/// (all ones where an inverter restores the gate's expected polarity).
#[derive(Debug, Clone, Copy)]
struct Input {
    wire: usize,
    flip: u64,
}

#[derive(Debug, Clone)]
struct Gate {
    op: Op,
    inputs: [Input; 3],
    /// Output wires: `sum` (or the single gate output) and, for adders, `carry`.
    sum: usize,
    carry: usize,
    /// Complement physical outputs.
    invert: bool,
}

#[derive(Debug, Clone, Copy)]
struct Wire {
    id: usize,
    /// Physical value is the complement of the logical value.
    negated: bool,
}

#[derive(Debug, Clone)]
struct Netlist {
    n_wires: usize,
    gates: Vec<Gate>,
    /// One optional wire per output bit, LSB first.
    outputs: Vec<Option<Wire>>,
    depth: usize,
    inverters: usize,
}

/// Description of an `n`-input APC: the approximate pairing plus the derived
/// adder tree.
#[derive(Debug, Clone)]
pub struct ApcDesign {
    pub n_inputs: usize,
    pub variant: ApcVariant,
    pub pairing: Vec<PairUnit>,
    /// Inputs fed straight into the weight-1 column of the tree.
    pub passthrough: Vec<usize>,
    pub logic: TreeLogic,
    netlist: Netlist,
}

/// Bits needed to hold any count in `0..=n`.
pub fn count_width(n: usize) -> usize {
    (usize::BITS - n.leading_zeros()) as usize
}

impl ApcDesign {
    /// Standard layout: inputs `(0,1), (2,3), ...` paired with alternating
    /// AND/OR gates starting from AND; the improved variant swaps the last
    /// pair's gate for a half adder. An odd input out goes straight to the tree.
    pub fn new(n_inputs: usize, variant: ApcVariant) -> Result<Self> {
        Self::with_logic(n_inputs, variant, TreeLogic::True)
    }

    pub fn with_logic(n_inputs: usize, variant: ApcVariant, logic: TreeLogic) -> Result<Self> {
        if n_inputs == 0 {
            return Err(Error::arg("an APC needs at least one input"));
        }
        let mut pairing = Vec::new();
        let mut passthrough = Vec::new();
        match variant {
            ApcVariant::Exact => passthrough.extend(0..n_inputs),
            ApcVariant::Original | ApcVariant::Improved => {
                let pairs = n_inputs / 2;
                for p in 0..pairs {
                    let gate = if variant == ApcVariant::Improved && p + 1 == pairs {
                        PairGate::HalfAdder
                    } else if p % 2 == 0 {
                        PairGate::And
                    } else {
                        PairGate::Or
                    };
                    pairing.push(PairUnit {
                        a: 2 * p,
                        b: 2 * p + 1,
                        gate,
                    });
                }
                if n_inputs % 2 == 1 {
                    passthrough.push(n_inputs - 1);
                }
            }
        }
        Self::from_layout(n_inputs, variant, pairing, passthrough, logic)
    }

    /// Builds a design from an explicit layout. Every input must appear
    /// exactly once across `pairing` and `passthrough`.
    pub fn from_layout(
        n_inputs: usize,
        variant: ApcVariant,
        pairing: Vec<PairUnit>,
        passthrough: Vec<usize>,
        logic: TreeLogic,
    ) -> Result<Self> {
        let mut used = vec![false; n_inputs];
        let all = pairing
            .iter()
            .flat_map(|p| [p.a, p.b])
            .chain(passthrough.iter().copied());
        for i in all {
            if i >= n_inputs || std::mem::replace(&mut used[i], true) {
                return Err(Error::arg(format!(
                    "input {i} is out of range or used twice in the APC layout"
                )));
            }
        }
        if used.iter().any(|u| !u) {
            return Err(Error::arg("APC layout leaves an input unconnected"));
        }
        let netlist = compile(n_inputs, &pairing, &passthrough, logic);
        Ok(ApcDesign {
            n_inputs,
            variant,
            pairing,
            passthrough,
            logic,
            netlist,
        })
    }

    /// Bits of the binary count output.
    pub fn output_width(&self) -> usize {
        count_width(self.n_inputs)
    }

    /// Gate levels from the inputs to the last adder, approximate unit included.
    pub fn tree_depth(&self) -> usize {
        self.netlist.depth
    }

    /// Inverters inserted where mirror-adder polarities disagree.
    pub fn inverter_count(&self) -> usize {
        self.netlist.inverters
    }

    pub fn half_adder_pairs(&self) -> usize {
        self.pairing
            .iter()
            .filter(|p| p.gate == PairGate::HalfAdder)
            .count()
    }

    /// Per-cycle variance of `2 * count - n` when every input is an
    /// independent fair bit. An exact counter gives `n`; each AND/OR pair
    /// emits its two bits as one weight-2 bit and contributes 3 instead of 2.
    pub fn step_variance(&self) -> f64 {
        let pairs: f64 = self
            .pairing
            .iter()
            .map(|p| if p.gate == PairGate::HalfAdder { 2.0 } else { 3.0 })
            .sum();
        pairs + self.passthrough.len() as f64
    }

    fn check_inputs(&self, streams: &[&BitStream]) -> Result<usize> {
        if streams.len() != self.n_inputs {
            return Err(Error::arg(format!(
                "APC has {} inputs but got {} streams",
                self.n_inputs,
                streams.len()
            )));
        }
        let first = streams[0];
        for s in &streams[1..] {
            first.check_compatible(s)?;
        }
        Ok(first.len())
    }

    /// Evaluates the counter on one 64-cycle slice. `inputs[i]` holds input
    /// `i` for those cycles; the result holds one bit-plane per output bit.
    pub fn eval_words(&self, inputs: &[u64], planes: &mut Vec<u64>) {
        let net = &self.netlist;
        let mut wires = vec![0u64; net.n_wires];
        wires[..self.n_inputs].copy_from_slice(inputs);
        for g in &net.gates {
            let v = |k: usize| wires[g.inputs[k].wire] ^ g.inputs[k].flip;
            let (s, c) = match g.op {
                Op::And => (v(0) & v(1), 0),
                Op::Or => (v(0) | v(1), 0),
                Op::HalfAdder => {
                    let (a, b) = (v(0), v(1));
                    (a ^ b, a & b)
                }
                Op::FullAdder => {
                    let (a, b, c) = (v(0), v(1), v(2));
                    (a ^ b ^ c, (a & b) | (c & (a ^ b)))
                }
            };
            let mask = if g.invert { u64::MAX } else { 0 };
            wires[g.sum] = s ^ mask;
            if matches!(g.op, Op::HalfAdder | Op::FullAdder) {
                wires[g.carry] = c ^ mask;
            }
        }
        planes.clear();
        planes.extend(net.outputs.iter().map(|o| match o {
            Some(w) => wires[w.id] ^ if w.negated { u64::MAX } else { 0 },
            None => 0,
        }));
    }

    /// Per-cycle counts for the given streams.
    pub fn add(&self, streams: &[&BitStream]) -> Result<ApcOutput> {
        let len = self.check_inputs(streams)?;
        let mut counts = Vec::with_capacity(len);
        let mut exact = Vec::with_capacity(len);
        let mut inputs = vec![0u64; self.n_inputs];
        let mut planes = Vec::new();
        for w in 0..len.div_ceil(64) {
            for (slot, s) in inputs.iter_mut().zip(streams) {
                *slot = s.words()[w];
            }
            self.eval_words(&inputs, &mut planes);
            let bits = (len - 64 * w).min(64);
            for b in 0..bits {
                let c: u32 = planes
                    .iter()
                    .enumerate()
                    .map(|(k, p)| (((p >> b) & 1) as u32) << k)
                    .sum();
                counts.push(c);
                exact.push(inputs.iter().map(|x| ((x >> b) & 1) as u32).sum());
            }
        }
        Ok(ApcOutput { counts, exact })
    }

    /// Sum of the per-cycle counts over the whole stream.
    pub fn total_count(&self, streams: &[&BitStream]) -> Result<u64> {
        let len = self.check_inputs(streams)?;
        let mut inputs = vec![0u64; self.n_inputs];
        let mut planes = Vec::new();
        let mut total = 0u64;
        for w in 0..len.div_ceil(64) {
            for (slot, s) in inputs.iter_mut().zip(streams) {
                *slot = s.words()[w];
            }
            self.eval_words(&inputs, &mut planes);
            let bits = (len - 64 * w).min(64);
            let mask = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
            total += planes
                .iter()
                .enumerate()
                .map(|(k, p)| ((p & mask).count_ones() as u64) << k)
                .sum::<u64>();
        }
        Ok(total)
    }
}

/// Counter output together with the exact popcount of each cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApcOutput {
    pub counts: Vec<u32>,
    pub exact: Vec<u32>,
}

pub fn apc_add(design: &ApcDesign, streams: &[&BitStream]) -> Result<ApcOutput> {
    design.add(streams)
}

struct Builder {
    n_wires: usize,
    gates: Vec<Gate>,
    inverters: usize,
    logic: TreeLogic,
}

impl Builder {
    fn wire(&mut self) -> usize {
        self.n_wires += 1;
        self.n_wires - 1
    }

    /// Aligns inputs to one polarity. Self-dual gates (full adders) keep the
    /// majority polarity; other gates get logical values.
    fn align(&mut self, ins: &[Wire], self_dual: bool) -> ([Input; 3], bool) {
        let negated = if self_dual {
            ins.iter().filter(|w| w.negated).count() * 2 > ins.len()
        } else {
            false
        };
        let mut out = [Input { wire: 0, flip: 0 }; 3];
        for (slot, w) in out.iter_mut().zip(ins) {
            let flip = w.negated != negated;
            if flip {
                self.inverters += 1;
            }
            *slot = Input {
                wire: w.id,
                flip: if flip { u64::MAX } else { 0 },
            };
        }
        (out, negated)
    }

    fn gate(&mut self, op: Op, ins: &[Wire]) -> (Wire, Wire) {
        let (inputs, in_negated) = self.align(ins, op == Op::FullAdder);
        let invert = self.logic == TreeLogic::Inverted;
        let sum = self.wire();
        let carry = if matches!(op, Op::HalfAdder | Op::FullAdder) {
            self.wire()
        } else {
            usize::MAX
        };
        self.gates.push(Gate {
            op,
            inputs,
            sum,
            carry,
            invert,
        });
        let negated = in_negated ^ invert;
        (
            Wire { id: sum, negated },
            Wire {
                id: carry,
                negated,
            },
        )
    }
}

/// Wallace-style reduction: each level sums triples in every column with
/// full adders and a leftover pair with a half adder, until every column
/// holds at most one wire.
fn compile(
    n_inputs: usize,
    pairing: &[PairUnit],
    passthrough: &[usize],
    logic: TreeLogic,
) -> Netlist {
    let mut b = Builder {
        n_wires: n_inputs,
        gates: Vec::new(),
        inverters: 0,
        logic,
    };
    let width = count_width(n_inputs).max(1);
    let mut columns: Vec<Vec<Wire>> = vec![Vec::new(); width + 1];
    let input = |i: usize| Wire {
        id: i,
        negated: false,
    };
    for &i in passthrough {
        columns[0].push(input(i));
    }
    let mut depth = 0;
    if !pairing.is_empty() {
        depth = 1;
    }
    for p in pairing {
        let ins = [input(p.a), input(p.b)];
        match p.gate {
            PairGate::And => columns[1].push(b.gate(Op::And, &ins).0),
            PairGate::Or => columns[1].push(b.gate(Op::Or, &ins).0),
            PairGate::HalfAdder => {
                let (s, c) = b.gate(Op::HalfAdder, &ins);
                columns[0].push(s);
                columns[1].push(c);
            }
        }
    }
    while columns.iter().any(|c| c.len() > 1) {
        depth += 1;
        let mut next: Vec<Vec<Wire>> = vec![Vec::new(); columns.len() + 1];
        for (k, col) in columns.iter().enumerate() {
            let mut rest = col.as_slice();
            while rest.len() >= 3 {
                let (s, c) = b.gate(Op::FullAdder, &rest[..3]);
                next[k].push(s);
                next[k + 1].push(c);
                rest = &rest[3..];
            }
            if rest.len() == 2 {
                let (s, c) = b.gate(Op::HalfAdder, rest);
                next[k].push(s);
                next[k + 1].push(c);
            } else if let Some(&w) = rest.first() {
                next[k].push(w);
            }
        }
        while next.last().is_some_and(|c| c.is_empty()) && next.len() > width {
            next.pop();
        }
        columns = next;
    }
    let mut outputs: Vec<Option<Wire>> = columns.iter().map(|c| c.first().copied()).collect();
    // carries beyond the count width are provably zero; keep the vector at `width`
    outputs.resize(width, None);
    Netlist {
        n_wires: b.n_wires,
        gates: b.gates,
        outputs,
        depth,
        inverters: b.inverters,
    }
}
