#![no_main]

use libfuzzer_sys::fuzz_target;
use rsmp::instances::{check_promises, Instance};

fuzz_target!(|data: &[u8]| {
    if let Ok(inst) = Instance::from_json(data) {
        let _ = check_promises(&inst);
        let again = Instance::from_json(inst.to_json().as_bytes()).expect("own output parses");
        assert_eq!(again, inst);
    }
});
