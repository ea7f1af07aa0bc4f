#![no_main]

use antkit::harness::{decode_cifar, Split};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(d) = decode_cifar(data, None, Split::Train) {
        assert_eq!(d.len() * antkit::harness::data::CIFAR_RECORD, data.len());
        assert!(d.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
