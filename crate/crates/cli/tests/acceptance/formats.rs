use easyasr_core::config::ClusterSpec;
use easyasr_core::records::{crc32c, frame_record, masked_crc32c, read_frames};
use easyasr_core::synth::{toy_config, toy_records};
use easyasr_core::trainer::{encode_checkpoint, load_checkpoint, save_checkpoint};
use easyasr_core::Trainer;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

/// Bitwise CRC-32C (reflected Castagnoli polynomial).
fn crc32c_oracle(bytes: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            crc = if crc & 1 == 1 { (crc >> 1) ^ 0x82F6_3B78 } else { crc >> 1 };
        }
    }
    !crc
}

fn masked_oracle(bytes: &[u8]) -> u32 {
    let crc = crc32c_oracle(bytes);
    crc.rotate_right(15).wrapping_add(0xA282_EAD8)
}

fn checkpoint_resume() -> Result<(), String> {
    let mut cfg = toy_config();
    cfg.training.max_steps = 8;
    cfg.training.eval_every = 8;
    let (vocab, records) = toy_records(&cfg.features, 3);
    let err = |e: easyasr_core::TrainerError| e.to_string();
    let cluster = ClusterSpec::with_workers(2);
    let mut straight = Trainer::new(&cfg, cluster, &vocab, records.clone()).map_err(err)?;
    for _ in 0..8 {
        straight.step().map_err(err)?;
    }
    let mut first = Trainer::new(&cfg, cluster, &vocab, records.clone()).map_err(err)?;
    for _ in 0..4 {
        first.step().map_err(err)?;
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("mid.ckpt");
    save_checkpoint(&first.checkpoint(None), &path).map_err(err)?;
    drop(first);
    let ckpt = load_checkpoint(&path).map_err(err)?;
    let mut resumed = Trainer::from_checkpoint(&cfg, cluster, &vocab, records, &ckpt).map_err(err)?;
    for _ in 0..4 {
        resumed.step().map_err(err)?;
    }
    ensure(
        encode_checkpoint(&straight.checkpoint(None)) == encode_checkpoint(&resumed.checkpoint(None)),
        || "resumed run differs from the straight run".into(),
    )
}

pub fn fidelity() -> Outcome {
    let check = crc32c(b"123456789");
    ensure(check == 0xE306_9283 && crc32c_oracle(b"123456789") == 0xE306_9283, || {
        format!("crc32c(\"123456789\") = {check:#010x}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let payloads: Vec<Vec<u8>> = (0..1000)
        .map(|i| {
            let len = if i % 100 == 0 { 0 } else { rng.gen_range(1..600) };
            (0..len).map(|_| rng.gen()).collect()
        })
        .collect();
    let mut stream = Vec::new();
    for p in &payloads {
        frame_record(p, &mut stream);
    }
    // walk the stream independently of the reader
    let mut pos = 0;
    for (i, p) in payloads.iter().enumerate() {
        let len_bytes = &stream[pos..pos + 8];
        let len = u64::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
        let len_crc = u32::from_le_bytes(stream[pos + 8..pos + 12].try_into().unwrap());
        let data = &stream[pos + 12..pos + 12 + len];
        let data_crc = u32::from_le_bytes(stream[pos + 12 + len..pos + 16 + len].try_into().unwrap());
        ensure(len == p.len() && data == p.as_slice(), || format!("payload {i} framed wrongly"))?;
        ensure(len_crc == masked_oracle(len_bytes) && data_crc == masked_oracle(p), || {
            format!("payload {i} has a bad masked CRC")
        })?;
        ensure(masked_crc32c(p) == masked_oracle(p), || format!("payload {i}: masked CRC disagrees with oracle"))?;
        pos += 16 + len;
    }
    ensure(pos == stream.len(), || "trailing bytes after the last frame".into())?;
    let read = read_frames(&stream).map_err(|e| e.to_string())?;
    ensure(read.len() == payloads.len() && read.iter().zip(&payloads).all(|(a, b)| *a == b.as_slice()), || {
        "reader round trip differs".into()
    })?;
    let mut flipped = stream.clone();
    flipped[20] ^= 1;
    ensure(read_frames(&flipped).is_err(), || "corruption went undetected".into())?;

    checkpoint_resume()?;
    Ok("crc32c check value matches, 1000 frames round-trip with valid masked CRCs, 4+4 resume is bitwise".into())
}
