//! Classic (libpcap) capture parsing. pcapng is not supported.

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr, SocketAddr};

use super::{Direction, FlowKey, IngestConfig, PacketRecord, TraceError, Transport};

const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
const LINKTYPE_ETHERNET: u32 = 1;

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

impl Endian {
    fn u16(self, b: &[u8]) -> u16 {
        let a = [b[0], b[1]];
        match self {
            Endian::Little => u16::from_le_bytes(a),
            Endian::Big => u16::from_be_bytes(a),
        }
    }

    fn u32(self, b: &[u8]) -> u32 {
        let a = [b[0], b[1], b[2], b[3]];
        match self {
            Endian::Little => u32::from_le_bytes(a),
            Endian::Big => u32::from_be_bytes(a),
        }
    }
}

/// Parses a classic pcap capture into per-packet records.
///
/// Only TCP and UDP over IPv4/IPv6 on Ethernet are considered. Packets not
/// involving a configured client address are dropped, as are segments whose
/// transport payload is shorter than `cfg.min_payload`. Timestamps are left
/// absolute; [`assemble_traces`](super::assemble_traces) re-bases them.
pub fn parse_pcap(bytes: &[u8], cfg: &IngestConfig) -> Result<Vec<PacketRecord>, TraceError> {
    cfg.validate()?;
    if bytes.len() < GLOBAL_HEADER_LEN {
        return Err(TraceError::MalformedHeader(format!(
            "global header needs {GLOBAL_HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    let magic = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let (endian, ts_divisor) = match magic {
        0xa1b2_c3d4 => (Endian::Little, 1e6),
        0xd4c3_b2a1 => (Endian::Big, 1e6),
        0xa1b2_3c4d => (Endian::Little, 1e9),
        0x4d3c_b2a1 => (Endian::Big, 1e9),
        other => return Err(TraceError::MalformedHeader(format!("bad magic number {other:#010x}"))),
    };
    let major = endian.u16(&bytes[4..6]);
    if major != 2 {
        return Err(TraceError::MalformedHeader(format!(
            "unsupported major version {major}"
        )));
    }
    // Upper nibble may carry FCS metadata.
    let linktype = endian.u32(&bytes[20..24]) & 0x0fff_ffff;
    if linktype != LINKTYPE_ETHERNET {
        return Err(TraceError::UnsupportedLinkType(linktype));
    }

    let mut out = Vec::new();
    let mut offset = GLOBAL_HEADER_LEN;
    let mut index = 0;
    while offset < bytes.len() {
        if bytes.len() - offset < RECORD_HEADER_LEN {
            return Err(TraceError::TruncatedPacket { index, offset });
        }
        let hdr = &bytes[offset..offset + RECORD_HEADER_LEN];
        let ts_sec = endian.u32(&hdr[0..4]);
        let ts_frac = endian.u32(&hdr[4..8]);
        let incl_len = endian.u32(&hdr[8..12]) as usize;
        let body_start = offset + RECORD_HEADER_LEN;
        if bytes.len() - body_start < incl_len {
            return Err(TraceError::TruncatedPacket { index, offset });
        }
        let frame = &bytes[body_start..body_start + incl_len];
        let t = ts_sec as f64 + ts_frac as f64 / ts_divisor;
        if let Some(rec) = decode_ethernet(frame, t, cfg) {
            out.push(rec);
        }
        offset = body_start + incl_len;
        index += 1;
    }
    Ok(out)
}

struct Segment {
    transport: Transport,
    src: SocketAddr,
    dst: SocketAddr,
    payload: usize,
}

fn decode_ethernet(frame: &[u8], t: f64, cfg: &IngestConfig) -> Option<PacketRecord> {
    if frame.len() < 14 {
        return None;
    }
    let mut ethertype = u16::from_be_bytes([frame[12], frame[13]]);
    let mut l3 = &frame[14..];
    // 802.1Q / 802.1ad tags
    while ethertype == 0x8100 || ethertype == 0x88a8 {
        if l3.len() < 4 {
            return None;
        }
        ethertype = u16::from_be_bytes([l3[2], l3[3]]);
        l3 = &l3[4..];
    }
    let seg = match ethertype {
        0x0800 => decode_ipv4(l3)?,
        0x86dd => decode_ipv6(l3)?,
        _ => return None,
    };
    if seg.payload < cfg.min_payload as usize {
        return None;
    }
    let (dir, client, remote) = if cfg.is_client(seg.src.ip()) {
        (Direction::Out, seg.src, seg.dst)
    } else if cfg.is_client(seg.dst.ip()) {
        (Direction::In, seg.dst, seg.src)
    } else {
        return None;
    };
    Some(PacketRecord {
        t,
        dir,
        size: u32::try_from(seg.payload).ok()?,
        flow: FlowKey {
            transport: seg.transport,
            client,
            remote,
        },
    })
}

fn decode_ipv4(p: &[u8]) -> Option<Segment> {
    if p.len() < 20 || p[0] >> 4 != 4 {
        return None;
    }
    let ihl = (p[0] & 0x0f) as usize * 4;
    let total_len = u16::from_be_bytes([p[2], p[3]]) as usize;
    let frag_offset = u16::from_be_bytes([p[6], p[7]]) & 0x1fff;
    if ihl < 20 || total_len < ihl || p.len() < ihl || frag_offset != 0 {
        return None;
    }
    let src = IpAddr::V4(Ipv4Addr::new(p[12], p[13], p[14], p[15]));
    let dst = IpAddr::V4(Ipv4Addr::new(p[16], p[17], p[18], p[19]));
    decode_transport(p[9], &p[ihl..], total_len - ihl, src, dst)
}

fn decode_ipv6(p: &[u8]) -> Option<Segment> {
    if p.len() < 40 || p[0] >> 4 != 6 {
        return None;
    }
    let mut remaining = u16::from_be_bytes([p[4], p[5]]) as usize;
    let mut next = p[6];
    let src = IpAddr::V6(Ipv6Addr::from(<[u8; 16]>::try_from(&p[8..24]).ok()?));
    let dst = IpAddr::V6(Ipv6Addr::from(<[u8; 16]>::try_from(&p[24..40]).ok()?));
    let mut rest = &p[40..];
    loop {
        match next {
            // hop-by-hop, routing, destination options
            0 | 43 | 60 => {
                if rest.len() < 8 {
                    return None;
                }
                let len = (rest[1] as usize + 1) * 8;
                if rest.len() < len || remaining < len {
                    return None;
                }
                next = rest[0];
                rest = &rest[len..];
                remaining -= len;
            }
            44 => {
                if rest.len() < 8 || remaining < 8 {
                    return None;
                }
                let frag_offset = u16::from_be_bytes([rest[2], rest[3]]) >> 3;
                if frag_offset != 0 {
                    return None;
                }
                next = rest[0];
                rest = &rest[8..];
                remaining -= 8;
            }
            _ => break,
        }
    }
    decode_transport(next, rest, remaining, src, dst)
}

/// `l4_len` is the transport length declared by the IP layer, which may
/// exceed the captured bytes when the snap length cut the packet.
fn decode_transport(proto: u8, l4: &[u8], l4_len: usize, src: IpAddr, dst: IpAddr) -> Option<Segment> {
    let (transport, header_len) = match proto {
        6 => {
            if l4.len() < 20 {
                return None;
            }
            let doff = (l4[12] >> 4) as usize * 4;
            if doff < 20 {
                return None;
            }
            (Transport::Tcp, doff)
        }
        17 => {
            if l4.len() < 8 {
                return None;
            }
            (Transport::Udp, 8)
        }
        _ => return None,
    };
    let payload = if transport == Transport::Udp {
        (u16::from_be_bytes([l4[4], l4[5]]) as usize).checked_sub(8)?
    } else {
        l4_len.checked_sub(header_len)?
    };
    let sport = u16::from_be_bytes([l4[0], l4[1]]);
    let dport = u16::from_be_bytes([l4[2], l4[3]]);
    Some(Segment {
        transport,
        src: SocketAddr::new(src, sport),
        dst: SocketAddr::new(dst, dport),
        payload,
    })
}
