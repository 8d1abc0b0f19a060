//! Built-in consistency checks run by `tfqkd selftest`.

use crate::analysis::{binary_entropy, key_rate, pattern_visibility, visibility};
use crate::protocol::{
    flip_correction, reference_visibility, sifting_table_violations, Announcement, EncodingBits,
    FlipCorrection, Port, ReferenceCounts, SiftedRecord,
};
use crate::timing::TimeBin;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, failures: Vec<String>) -> Check {
    Check {
        name,
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            "ok".into()
        } else {
            failures.join("; ")
        },
    }
}

fn expect(failures: &mut Vec<String>, ok: bool, what: impl Into<String>) {
    if !ok {
        failures.push(what.into());
    }
}

pub fn run_all() -> Vec<Check> {
    vec![
        check(
            "sifting table (16 combinations)",
            sifting_table_violations(0.1),
        ),
        entropy_identities(),
        visibility_identities(),
        flip_identities(),
    ]
}

fn entropy_identities() -> Check {
    let mut f = Vec::new();
    expect(&mut f, binary_entropy(0.5) == 1.0, "h(0.5) != 1");
    expect(
        &mut f,
        binary_entropy(0.0) == 0.0 && binary_entropy(1.0) == 0.0,
        "h(0), h(1) != 0",
    );
    for i in 0..=1000 {
        let x = i as f64 / 1000.0;
        if (binary_entropy(x) - binary_entropy(1.0 - x)).abs() > 1e-12 {
            f.push(format!("h not symmetric at {x}"));
            break;
        }
    }
    expect(
        &mut f,
        key_rate(1e-3, 0.0, 0.0) == 1e-3,
        "R != R_sift in the noiseless limit",
    );
    expect(
        &mut f,
        key_rate(1e-3, 0.5, 0.5) == 0.0,
        "R not clamped at full entropy",
    );
    check("entropy and key-rate identities", f)
}

fn visibility_identities() -> Check {
    let mut f = Vec::new();
    expect(&mut f, visibility(100, 0) == Some(1.0), "V(100, 0) != 1");
    expect(&mut f, visibility(40, 40) == Some(0.0), "V(n, n) != 0");
    expect(&mut f, visibility(0, 0).is_none(), "V(0, 0) defined");
    expect(
        &mut f,
        pattern_visibility(50, 50, 100) == Some(0.0),
        "pattern V(50, 50, 100) != 0",
    );
    expect(
        &mut f,
        reference_visibility(0, 100) == Some(-1.0),
        "reference V(0, 100) != -1",
    );
    check("visibility identities", f)
}

fn flip_identities() -> Check {
    let mut f = Vec::new();
    let ann = Announcement {
        frame_index: 5,
        bin: TimeBin::Third,
        port: Port::Destructive,
    };
    let bits = EncodingBits::new(false, true);
    let records = vec![SiftedRecord::new(ann, bits, bits)];
    let reference = vec![ReferenceCounts {
        frame_index: 1,
        constructive: 0,
        destructive: 3,
    }];
    match flip_correction(&reference, &records, &FlipCorrection::default()) {
        Ok(out) => {
            expect(
                &mut f,
                out.records.iter().all(|r| !r.is_error()),
                "misaligned window not corrected",
            );
            match flip_correction(&out.reference, &out.records, &FlipCorrection::default()) {
                Ok(again) => expect(
                    &mut f,
                    again.records == out.records,
                    "correction not idempotent",
                ),
                Err(e) => f.push(e.to_string()),
            }
        }
        Err(e) => f.push(e.to_string()),
    }
    check("flip correction", f)
}
