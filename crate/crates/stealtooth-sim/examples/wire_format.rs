//! The attacker-to-attacker relay link, bottom up: frame bytes on the wire,
//! reassembly from arbitrary chunk boundaries, the reconnect backoff curve,
//! and the bounded capture queue.

use stealtooth_sim::relay::{
    encode_frame, AudioFrame, BackoffSchedule, BoundedQueue, CodecKind, FrameDecoder, FrameKind,
    WireFrame, HEADER_LEN, QUEUE_CAPACITY,
};

fn wire(frame: AudioFrame) -> WireFrame {
    WireFrame {
        kind: FrameKind::Audio,
        seq: frame.seq,
        payload: frame.pcm,
    }
}

fn main() {
    // One audio frame, hex-dumped. 4B magic, version, kind, 4B seq, 4B len.
    let frame = AudioFrame::new(7, vec![0xAA, 0xBB, 0xCC, 0xDD], CodecKind::PcmPassthrough)
        .expect("payload fits");
    let bytes = encode_frame(&wire(frame)).expect("encodes");
    print!("audio frame ({} header + {} payload):", HEADER_LEN, bytes.len() - HEADER_LEN);
    for (i, b) in bytes.iter().enumerate() {
        if i % 8 == 0 {
            println!();
            print!("  ");
        }
        print!("{b:02x} ");
    }
    println!();

    // The decoder does not care how the transport chunks the stream.
    let mut stream = Vec::new();
    for seq in 0..4u32 {
        let f = AudioFrame::new(seq, vec![seq as u8; 16], CodecKind::PcmPassthrough).unwrap();
        stream.extend(encode_frame(&wire(f)).unwrap());
    }
    let mut decoder = FrameDecoder::new();
    let mut recovered = Vec::new();
    for chunk in stream.chunks(5) {
        recovered.extend(decoder.push(chunk).expect("clean stream decodes"));
    }
    println!();
    println!(
        "fed {} bytes in 5-byte chunks, recovered {} frames, {} bytes pending",
        stream.len(),
        recovered.len(),
        decoder.pending_bytes()
    );
    assert_eq!(recovered.len(), 4);

    // Reconnect backoff: doubling from 100ms, capped at 5s.
    let delays: Vec<u64> = (0..8).map(BackoffSchedule::delay_for).collect();
    println!();
    println!("backoff curve: {delays:?}");

    // The capture queue never grows past its capacity; overflow drops the
    // oldest samples, keeping the freshest audio for when the link returns.
    let mut queue = BoundedQueue::new(QUEUE_CAPACITY);
    for i in 0..300u32 {
        queue.push(i);
    }
    println!();
    println!(
        "pushed 300 into a {}-slot queue: len={} dropped={} oldest={:?}",
        queue.capacity(),
        queue.len(),
        queue.dropped(),
        queue.pop()
    );
    assert_eq!(queue.dropped(), 44);
    assert_eq!(queue.pop(), Some(45));
}
