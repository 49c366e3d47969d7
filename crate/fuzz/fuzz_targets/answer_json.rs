#![no_main]

use libfuzzer_sys::fuzz_target;
use rsmp::relations::{P11Answer, PnnAnswer};

fuzz_target!(|data: &[u8]| {
    if let Ok(ans) = PnnAnswer::from_json(data) {
        assert_eq!(PnnAnswer::from_json(ans.to_json().as_bytes()).unwrap(), ans);
    }
    if let Ok(ans) = P11Answer::from_json(data) {
        assert_eq!(P11Answer::from_json(ans.to_json().as_bytes()).unwrap(), ans);
    }
});
