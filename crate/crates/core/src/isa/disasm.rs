//! Program to `.mtasm` text. Branch targets become `L<n>` labels where
//! `n` is the target's instruction index.

use std::collections::BTreeSet;
use std::fmt::Write;

use super::{AllocMode, AllocStrategy, Instruction, Program};
use crate::sep::SepPolicy;

pub fn disassemble(program: &Program) -> String {
    let mut out = String::new();
    if !program.threads.is_empty() {
        let _ = writeln!(out, ".entry {}", program.entry_thread().name);
    }
    for seg in &program.data {
        let _ = write!(out, ".data {}", seg.addr);
        for w in &seg.words {
            let _ = write!(out, " {w}");
        }
        out.push('\n');
    }
    for thread in &program.threads {
        let c = thread.counts;
        let _ = writeln!(
            out,
            "\n.thread {} g={} s={} l={} d={}",
            thread.name, c.globals, c.shareds, c.locals, c.dependents
        );
        let targets: BTreeSet<usize> = thread.body.iter().filter_map(Instruction::branch_target).collect();
        for (i, instr) in thread.body.iter().enumerate() {
            if targets.contains(&i) {
                let _ = writeln!(out, "L{i}:");
            }
            let _ = writeln!(out, "    {}", render(instr, program));
        }
    }
    out
}

fn render(instr: &Instruction, program: &Program) -> String {
    use Instruction::*;
    let m = instr.mnemonic();
    match instr {
        Alu { dst, a, b, .. } | Fpu { dst, a, b, .. } => format!("{m} {dst}, {a}, {b}"),
        Mov { dst, src } => format!("{m} {dst}, {src}"),
        Jump { target } => format!("{m} L{target}"),
        Branch { a, b, target, .. } => format!("{m} {a}, {b}, L{target}"),
        Ld { dst, base, offset } => format!("{m} {dst}, {base}, {offset}"),
        St { src, base, offset } => format!("{m} {src}, {base}, {offset}"),
        GetIdx { dst } => format!("{m} {dst}"),
        Allocate {
            dst,
            place,
            mode,
            strategy,
            forceseq,
        } => {
            let mut s = format!("{m} {dst}, {place}");
            match mode {
                AllocMode::Normal => {}
                AllocMode::Suspend => s.push_str(", suspend"),
                AllocMode::Exclusive => s.push_str(", exclusive"),
            }
            match strategy {
                AllocStrategy::Normal => {}
                AllocStrategy::Exact => s.push_str(", exact"),
                AllocStrategy::Single => s.push_str(", single"),
                AllocStrategy::Balanced => s.push_str(", balanced"),
            }
            if *forceseq {
                s.push_str(", forceseq");
            }
            s
        }
        SetParam { fid, value, .. } => format!("{m} {fid}, {value}"),
        Create { fid, thread } | Detach { fid, thread } => {
            format!("{m} {fid}, {}", program.threads[*thread].name)
        }
        Sync { fid } | Release { fid } => format!("{m} {fid}"),
        PutG { fid, slot, value } | PutS { fid, slot, value } => format!("{m} {fid}, #{slot}, {value}"),
        GetS { dst, fid, slot } => format!("{m} {dst}, {fid}, #{slot}"),
        SepAlloc { dst, count, policy } => {
            let p = match policy {
                SepPolicy::Minimum => "min",
                SepPolicy::Maximum => "max",
                SepPolicy::Exact => "exact",
                SepPolicy::AnySize => "any",
            };
            format!("{m} {dst}, {count}, {p}")
        }
        SepFree { place } => format!("{m} {place}"),
        Print { value } => format!("{m} {value}"),
        Break | Nop | End => m.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{
        assemble, AluOp, Cond, DataSegment, FamilyParam, FpuOp, Operand, Reg, RegClass, ThreadDef,
    };
    use crate::sync::ClassCounts;
    use proptest::prelude::*;

    #[test]
    fn single_instruction_thread() {
        let p = assemble(".thread main\nEND").unwrap();
        assert_eq!(assemble(&disassemble(&p)).unwrap(), p);
    }

    #[test]
    fn labels_and_creates() {
        let src = "\
.data 64 1 -2 3
.entry main
.thread child g=1 s=1 l=1 d=1
    ADD s0, d0, g0
    END
.thread main l=2
top:
    ALLOCATE l0, #0, exclusive, balanced, forceseq
    SETLIMIT l0, #10
    PUTG l0, #0, #5
    PUTS l0, #-7
    CREI l0, child
    SYNC l0
    GETS l1, l0
    RELEASE l0
    BLT l1, #0, top
    SEPALLOC l1, #3, max
    SEPFREE l1
    DETACH l0, child
    END
";
        let p = assemble(src).unwrap();
        assert_eq!(p.entry, 1);
        let text = disassemble(&p);
        assert_eq!(assemble(&text).unwrap(), p, "{text}");
    }

    fn operand() -> impl Strategy<Value = Operand> {
        prop_oneof![
            (0u16..2).prop_map(|i| Operand::Reg(Reg::new(RegClass::Local, i))),
            (0u16..1).prop_map(|i| Operand::Reg(Reg::new(RegClass::Global, i))),
            any::<i64>().prop_map(Operand::Imm),
        ]
    }

    fn dst() -> impl Strategy<Value = Reg> {
        prop_oneof![
            (0u16..2).prop_map(|i| Reg::new(RegClass::Local, i)),
            Just(Reg::new(RegClass::Shared, 0)),
        ]
    }

    fn instr(len: usize) -> impl Strategy<Value = Instruction> {
        let alu = prop_oneof![
            Just(AluOp::Add),
            Just(AluOp::Sub),
            Just(AluOp::Mul),
            Just(AluOp::Div),
            Just(AluOp::Rem),
            Just(AluOp::Shl),
            Just(AluOp::Cmp),
            Just(AluOp::Slt),
        ];
        let cond = prop_oneof![Just(Cond::Eq), Just(Cond::Ne), Just(Cond::Lt), Just(Cond::Ge)];
        prop_oneof![
            (alu, dst(), operand(), operand()).prop_map(|(op, dst, a, b)| Instruction::Alu { op, dst, a, b }),
            (dst(), operand()).prop_map(|(dst, src)| Instruction::Mov { dst, src }),
            (dst(), operand(), operand()).prop_map(|(dst, a, b)| Instruction::Fpu {
                op: FpuOp::Mul,
                dst,
                a,
                b
            }),
            (0..len).prop_map(|target| Instruction::Jump { target }),
            (cond, operand(), operand(), 0..len).prop_map(|(cond, a, b, target)| Instruction::Branch {
                cond,
                a,
                b,
                target
            }),
            (dst(), operand(), operand()).prop_map(|(dst, base, offset)| Instruction::Ld { dst, base, offset }),
            (operand(), operand(), operand()).prop_map(|(src, base, offset)| Instruction::St { src, base, offset }),
            (operand(), operand()).prop_map(|(fid, value)| Instruction::SetParam {
                param: FamilyParam::Step,
                fid,
                value
            }),
            (operand(), 0u16..4, operand()).prop_map(|(fid, slot, value)| Instruction::PutS { fid, slot, value }),
            (dst(), operand(), 0u16..4).prop_map(|(dst, fid, slot)| Instruction::GetS { dst, fid, slot }),
            operand().prop_map(|value| Instruction::Print { value }),
            Just(Instruction::Nop),
            Just(Instruction::Break),
        ]
    }

    proptest! {
        #[test]
        fn random_bodies_round_trip(
            body in (2usize..24).prop_flat_map(|n| proptest::collection::vec(instr(n), n - 1..n)),
            data in proptest::collection::vec(any::<i64>(), 0..4),
        ) {
            let mut body = body;
            body.push(Instruction::End);
            let p = Program {
                threads: vec![ThreadDef {
                    name: "t".into(),
                    counts: ClassCounts::new(1, 1, 2, 1),
                    body,
                }],
                entry: 0,
                data: vec![DataSegment { addr: 12, words: data }],
            };
            let text = disassemble(&p);
            prop_assert_eq!(assemble(&text).unwrap(), p);
        }
    }
}
