//! The benchmark programs shipped with the crate.

/// Expected outcome of type checking a corpus program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    Pass,
    /// The program must be rejected by the type checker.
    Reject,
}

#[derive(Debug, Clone, Copy)]
pub struct Entry {
    pub name: &'static str,
    pub source: &'static str,
    pub expect: Expect,
}

macro_rules! entry {
    ($name:literal, $expect:expr) => {
        Entry {
            name: $name,
            source: include_str!(concat!("../../../corpus/", $name, ".sdp")),
            expect: $expect,
        }
    };
}

pub const ENTRIES: &[Entry] = &[
    entry!("noisymax", Expect::Pass),
    entry!("svt", Expect::Pass),
    entry!("svt_n1", Expect::Pass),
    entry!("numsvt_n1", Expect::Pass),
    entry!("numsvt", Expect::Pass),
    entry!("gapsvt", Expect::Pass),
    entry!("partialsum", Expect::Pass),
    entry!("prefixsum", Expect::Pass),
    entry!("smartsum", Expect::Pass),
    entry!("gapsvt_wrong", Expect::Reject),
    entry!("svt_unsafe", Expect::Reject),
];

/// The nine benchmarks expected to type check.
pub fn benchmarks() -> impl Iterator<Item = &'static Entry> {
    ENTRIES.iter().filter(|e| e.expect == Expect::Pass)
}

pub fn get(name: &str) -> Option<&'static Entry> {
    ENTRIES.iter().find(|e| e.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;
    use crate::printer::print_program;

    #[test]
    fn every_entry_parses_and_round_trips() {
        for e in ENTRIES {
            let p = parse_program(e.source).unwrap_or_else(|err| panic!("{}: {err}", e.name));
            let again = parse_program(&print_program(&p)).unwrap();
            assert_eq!(p, again, "{}", e.name);
        }
        assert_eq!(benchmarks().count(), 9);
    }
}
