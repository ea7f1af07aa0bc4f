#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = antkit::arch::parse_spec(text) {
        // Anything accepted must survive a round trip and resolve.
        let again = antkit::arch::parse_spec(&antkit::arch::emit_spec(&spec)).expect("emitted spec parses");
        assert_eq!(again, spec);
        spec.resolve().expect("parsed spec resolves");
    }
});
