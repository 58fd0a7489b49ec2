#![no_main]

use libfuzzer_sys::fuzz_target;
use privest::finite::FiniteSystem;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(fs) = FiniteSystem::from_json_str(text) {
        let again = FiniteSystem::from_json_str(&fs.to_json()).expect("round trip");
        assert_eq!(fs, again);
    }
});
