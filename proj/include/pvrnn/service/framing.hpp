#pragma once

#include <cctype>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>
#include <openssl/sha.h>

#include "pvrnn/error.hpp"

namespace pvrnn::framing {

inline constexpr std::size_t kMaxFrame = 1u << 20;

/// 4-byte big-endian length followed by the UTF-8 payload.
inline std::string encode_length_prefixed(std::string_view payload) {
  if (payload.size() > kMaxFrame) throw FormatError("frame too large");
  std::string out(4, '\0');
  const auto n = static_cast<std::uint32_t>(payload.size());
  out[0] = static_cast<char>((n >> 24) & 0xff);
  out[1] = static_cast<char>((n >> 16) & 0xff);
  out[2] = static_cast<char>((n >> 8) & 0xff);
  out[3] = static_cast<char>(n & 0xff);
  out.append(payload);
  return out;
}

/// Incremental decoder for length-prefixed frames.
class LengthPrefixedDecoder {
 public:
  void feed(std::string_view bytes) { buf_.append(bytes); }

  std::optional<std::string> next() {
    if (buf_.size() < 4) return std::nullopt;
    const std::uint32_t n = (static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[0])) << 24) |
                            (static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[1])) << 16) |
                            (static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[2])) << 8) |
                            static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[3]));
    if (n > kMaxFrame) throw FormatError("frame too large: " + std::to_string(n) + " bytes");
    if (buf_.size() < 4 + static_cast<std::size_t>(n)) return std::nullopt;
    std::string out = buf_.substr(4, n);
    buf_.erase(0, 4 + static_cast<std::size_t>(n));
    return out;
  }

 private:
  std::string buf_;
};

inline std::string base64(const unsigned char* data, std::size_t n) {
  std::string out(4 * ((n + 2) / 3), '\0');
  const int len = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data, static_cast<int>(n));
  out.resize(static_cast<std::size_t>(len));
  return out;
}

/// Sec-WebSocket-Accept value for a client key.
inline std::string websocket_accept(std::string_view key) {
  const std::string s = std::string(key) + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(s.data()), s.size(), digest);
  return base64(digest, SHA_DIGEST_LENGTH);
}

/// Extracts the Sec-WebSocket-Key of an HTTP upgrade request, or nullopt when
/// the request is not a websocket upgrade.
inline std::optional<std::string> websocket_key(std::string_view request) {
  auto lower = [](std::string_view s) {
    std::string o(s);
    for (auto& c : o) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return o;
  };
  std::size_t pos = request.find("\r\n");
  bool upgrade = false;
  std::optional<std::string> key;
  while (pos != std::string_view::npos) {
    const std::size_t start = pos + 2;
    const std::size_t end = request.find("\r\n", start);
    if (end == std::string_view::npos || end == start) break;
    const auto line = request.substr(start, end - start);
    const auto colon = line.find(':');
    if (colon != std::string_view::npos) {
      const auto name = lower(line.substr(0, colon));
      auto value = line.substr(colon + 1);
      while (!value.empty() && value.front() == ' ') value.remove_prefix(1);
      while (!value.empty() && value.back() == ' ') value.remove_suffix(1);
      if (name == "upgrade" && lower(value) == "websocket") upgrade = true;
      if (name == "sec-websocket-key") key = std::string(value);
    }
    pos = end;
  }
  if (!upgrade || !key) return std::nullopt;
  return key;
}

inline std::string websocket_handshake_response(std::string_view key) {
  return "HTTP/1.1 101 Switching Protocols\r\n"
         "Upgrade: websocket\r\n"
         "Connection: Upgrade\r\n"
         "Sec-WebSocket-Accept: " +
         websocket_accept(key) + "\r\n\r\n";
}

enum class WsOpcode : std::uint8_t { continuation = 0x0, text = 0x1, binary = 0x2, close = 0x8, ping = 0x9, pong = 0xA };

/// Unfragmented frame; server frames are unmasked, client frames carry a mask.
inline std::string encode_websocket(std::string_view payload, WsOpcode op = WsOpcode::text,
                                    std::optional<std::uint32_t> mask = std::nullopt) {
  if (payload.size() > kMaxFrame) throw FormatError("frame too large");
  std::string out;
  out.push_back(static_cast<char>(0x80 | static_cast<std::uint8_t>(op)));
  const std::uint8_t mbit = mask ? 0x80 : 0x00;
  const auto n = payload.size();
  if (n < 126) {
    out.push_back(static_cast<char>(mbit | n));
  } else if (n <= 0xffff) {
    out.push_back(static_cast<char>(mbit | 126));
    out.push_back(static_cast<char>((n >> 8) & 0xff));
    out.push_back(static_cast<char>(n & 0xff));
  } else {
    out.push_back(static_cast<char>(mbit | 127));
    for (int i = 7; i >= 0; --i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(n) >> (8 * i)) & 0xff));
  }
  if (!mask) {
    out.append(payload);
    return out;
  }
  unsigned char mk[4] = {static_cast<unsigned char>(*mask >> 24), static_cast<unsigned char>(*mask >> 16),
                         static_cast<unsigned char>(*mask >> 8), static_cast<unsigned char>(*mask)};
  out.append(reinterpret_cast<const char*>(mk), 4);
  for (std::size_t i = 0; i < n; ++i) out.push_back(static_cast<char>(payload[i] ^ mk[i % 4]));
  return out;
}

struct WsFrame {
  WsOpcode op;
  std::string payload;  // reassembled for fragmented text/binary messages
};

/// Incremental websocket decoder. Reassembles fragmented messages and returns
/// control frames (close, ping, pong) as they arrive.
class WebSocketDecoder {
 public:
  void feed(std::string_view bytes) { buf_.append(bytes); }

  std::optional<WsFrame> next() {
    while (true) {
      if (buf_.size() < 2) return std::nullopt;
      const auto b0 = static_cast<std::uint8_t>(buf_[0]);
      const auto b1 = static_cast<std::uint8_t>(buf_[1]);
      const bool fin = b0 & 0x80;
      const auto op = static_cast<WsOpcode>(b0 & 0x0f);
      const bool masked = b1 & 0x80;
      std::uint64_t n = b1 & 0x7f;
      std::size_t hdr = 2;
      if (n == 126) {
        if (buf_.size() < 4) return std::nullopt;
        n = (static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf_[2])) << 8) | static_cast<std::uint8_t>(buf_[3]);
        hdr = 4;
      } else if (n == 127) {
        if (buf_.size() < 10) return std::nullopt;
        n = 0;
        for (int i = 0; i < 8; ++i) n = (n << 8) | static_cast<std::uint8_t>(buf_[2 + i]);
        hdr = 10;
      }
      if (n > kMaxFrame) throw FormatError("websocket frame too large");
      const std::size_t mask_len = masked ? 4 : 0;
      if (buf_.size() < hdr + mask_len + n) return std::nullopt;
      std::string payload = buf_.substr(hdr + mask_len, static_cast<std::size_t>(n));
      if (masked)
        for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<char>(payload[i] ^ buf_[hdr + i % 4]);
      buf_.erase(0, hdr + mask_len + static_cast<std::size_t>(n));

      if (op == WsOpcode::close || op == WsOpcode::ping || op == WsOpcode::pong) return WsFrame{op, std::move(payload)};
      if (op == WsOpcode::continuation) {
        if (!partial_) throw FormatError("websocket continuation without a start frame");
        partial_->payload += payload;
      } else if (op == WsOpcode::text || op == WsOpcode::binary) {
        if (partial_) throw FormatError("websocket message interleaved with an unfinished one");
        partial_ = WsFrame{op, std::move(payload)};
      } else {
        throw FormatError("websocket: unknown opcode");
      }
      if (partial_->payload.size() > kMaxFrame) throw FormatError("websocket message too large");
      if (fin) {
        WsFrame out = std::move(*partial_);
        partial_.reset();
        return out;
      }
    }
  }

 private:
  std::string buf_;
  std::optional<WsFrame> partial_;
};

}  // namespace pvrnn::framing
