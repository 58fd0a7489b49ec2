#![no_main]

use libfuzzer_sys::fuzz_target;
use privest::policy::PolicyParams;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(p) = PolicyParams::from_json_str(text) {
        let again = PolicyParams::from_json_str(&p.to_json()).expect("round trip");
        assert_eq!(p.to_json(), again.to_json());
    }
});
