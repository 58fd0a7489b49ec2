#![no_main]

use libfuzzer_sys::fuzz_target;
use privest::infoloss::CriticParams;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = CriticParams::from_json_str(text) {
        let again = CriticParams::from_json_str(&c.to_json()).expect("round trip");
        assert_eq!(c.to_json(), again.to_json());
    }
});
