#![no_main]

use antkit::harness::{decode_checkpoint, encode_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(net) = decode_checkpoint(data) {
        // Spec JSON may be non-canonical in the input, so compare re-encodings.
        let bytes = encode_checkpoint(&net);
        let again = decode_checkpoint(&bytes).expect("encoded checkpoint decodes");
        assert_eq!(encode_checkpoint(&again), bytes);
    }
});
