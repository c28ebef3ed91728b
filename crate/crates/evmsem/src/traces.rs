//! Execution traces and projections onto a contract's calls.

use std::io::{self, Write};

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::bytecode::Opcode;
use crate::state::{Annotation, Contract};
use crate::words::Word256;

/// How a callee frame ended, as observed by the resuming caller.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReturnKind {
    Halt,
    Exc,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Event {
    /// The instruction ran (or failed for lack of gas) with these operands,
    /// listed top of stack first. A push carries its immediate.
    Exec(Vec<Word256>),
    /// Too few operands on the machine stack.
    StackUnderflow,
    /// The caller resumed after its callee ended.
    Return(ReturnKind),
}

/// One step of a trace, attributed to the annotation of the frame that took it.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Action {
    pub contract: Annotation,
    pub op: Opcode,
    pub event: Event,
}

pub type Trace = Vec<Action>;

impl Action {
    pub fn args(&self) -> &[Word256] {
        match &self.event {
            Event::Exec(args) => args,
            _ => &[],
        }
    }

    /// Whether this is a call-family invocation made by `c`.
    pub fn is_call_by(&self, c: &Contract) -> bool {
        self.op.is_call_family() && matches!(self.event, Event::Exec(_)) && self.contract.as_ref() == Some(c)
    }

    /// The action with the forwarded-gas operand masked out.
    pub fn without_gas(&self) -> Action {
        let mut a = self.clone();
        if matches!(self.op, Opcode::Call | Opcode::CallCode | Opcode::DelegateCall) {
            if let Event::Exec(args) = &mut a.event {
                if let Some(g) = args.first_mut() {
                    *g = Word256::ZERO;
                }
            }
        }
        a
    }
}

/// Keeps the actions matching `pred`, in order.
pub fn project(trace: &[Action], pred: impl Fn(&Action) -> bool) -> Trace {
    trace.iter().filter(|a| pred(a)).cloned().collect()
}

/// Predicate selecting the call-family actions of `c`.
pub fn calls_of(c: &Contract) -> impl Fn(&Action) -> bool + '_ {
    move |a| a.is_call_by(c)
}

/// Index of the first position where the traces differ, if any.
pub fn first_divergence(a: &[Action], b: &[Action], relaxed_gas: bool) -> Option<usize> {
    let eq = |x: &Action, y: &Action| {
        if relaxed_gas {
            x.without_gas() == y.without_gas()
        } else {
            x == y
        }
    };
    let common = a.len().min(b.len());
    (0..common).find(|&i| !eq(&a[i], &b[i])).or((a.len() != b.len()).then_some(common))
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("Action", 4)?;
        st.serialize_field("contract", &self.contract.as_ref().map(|c| c.address))?;
        st.serialize_field("op", &self.op)?;
        match &self.event {
            Event::Exec(args) => {
                st.serialize_field("event", "exec")?;
                st.serialize_field("args", args)?;
            }
            Event::StackUnderflow => {
                st.serialize_field("event", "underflow")?;
                st.serialize_field("args", &[] as &[Word256])?;
            }
            Event::Return(kind) => {
                st.serialize_field("event", kind)?;
                st.serialize_field("args", &[] as &[Word256])?;
            }
        }
        st.end()
    }
}

/// Writes one JSON object per action.
pub fn write_jsonl(trace: &[Action], mut out: impl Write) -> io::Result<()> {
    for a in trace {
        serde_json::to_writer(&mut out, a)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
