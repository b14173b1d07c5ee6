#include "mgdispatch/wire.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <array>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <limits>

#include <json.hpp>

static_assert(std::numeric_limits<double>::is_iec559, "IEEE-754 doubles required");

namespace mgd {

namespace {

constexpr std::size_t kHeaderBytes = 12;
constexpr std::size_t kMaxPayload = 65535;

std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> t{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int b = 0; b < 8; ++b) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    t[i] = c;
  }
  return t;
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void write_all(int fd, const std::uint8_t* data, std::size_t n) {
  std::size_t off = 0;
  while (off < n) {
    const ssize_t w = ::write(fd, data + off, n - off);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw WireError(std::string("socket write failed: ") + std::strerror(errno));
    }
    if (w == 0) throw WireError("socket write returned zero");
    off += static_cast<std::size_t>(w);
  }
}

// Returns false on clean EOF before the first byte; throws on partial reads.
bool read_exact(int fd, std::uint8_t* data, std::size_t n, bool eof_ok) {
  std::size_t off = 0;
  while (off < n) {
    const ssize_t r = ::read(fd, data + off, n - off);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw WireError(std::string("socket read failed: ") + std::strerror(errno));
    }
    if (r == 0) {
      if (off == 0 && eof_ok) return false;
      throw WireError("connection closed mid-frame");
    }
    off += static_cast<std::size_t>(r);
  }
  return true;
}

}  // namespace

std::uint32_t crc32_ieee(const std::uint8_t* data, std::size_t n) {
  static const std::array<std::uint32_t, 256> table = make_crc_table();
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

std::vector<std::uint8_t> encode_frame(const WireFrame& f) {
  if (f.payload.size() > kMaxPayload) throw WireError("payload too long");
  for (double v : f.payload)
    if (!std::isfinite(v)) throw WireError("non-finite payload value");

  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + 8 * f.payload.size() + 4);
  out.push_back(f.version);
  out.push_back(static_cast<std::uint8_t>(f.type));
  out.push_back(f.flags);
  out.push_back(0);
  put_u16(out, f.unit_id);
  put_u16(out, static_cast<std::uint16_t>(f.payload.size()));
  put_u32(out, f.k);
  for (double v : f.payload) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i)
      out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xFF));
  }
  put_u32(out, crc32_ieee(out.data(), out.size()));
  return out;
}

WireFrame decode_frame(const std::uint8_t* data, std::size_t n) {
  if (n < kHeaderBytes + 4) throw WireError("frame too short");
  if (data[0] != 1) throw WireError("unsupported wire version " + std::to_string(data[0]));
  if (data[1] > 4) throw WireError("unknown frame type " + std::to_string(data[1]));
  const std::uint16_t count = get_u16(data + 6);
  if (n != kHeaderBytes + 8u * count + 4u) throw WireError("frame length mismatch");
  const std::uint32_t want = get_u32(data + n - 4);
  if (crc32_ieee(data, n - 4) != want) throw WireError("frame checksum mismatch");

  WireFrame f;
  f.version = data[0];
  f.type = static_cast<WireType>(data[1]);
  f.flags = data[2];
  f.unit_id = get_u16(data + 4);
  f.k = get_u32(data + 8);
  f.payload.resize(count);
  for (std::uint16_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= static_cast<std::uint64_t>(data[kHeaderBytes + 8 * i + b]) << (8 * b);
    f.payload[i] = std::bit_cast<double>(bits);
  }
  return f;
}

std::string frame_to_json_line(const WireFrame& f) {
  const std::vector<std::uint8_t> bytes = encode_frame(f);
  nlohmann::json j;
  j["v"] = f.version;
  j["type"] = static_cast<int>(f.type);
  j["flags"] = f.flags;
  j["unit"] = f.unit_id;
  j["k"] = f.k;
  j["payload"] = f.payload;
  j["crc"] = get_u32(bytes.data() + bytes.size() - 4);
  return j.dump();
}

WireFrame frame_from_json_line(const std::string& s) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(s);
  } catch (const nlohmann::json::exception& e) {
    throw WireError(std::string("bad JSON frame: ") + e.what());
  }
  WireFrame f;
  try {
    f.version = j.at("v").get<std::uint8_t>();
    const int type = j.at("type").get<int>();
    if (type < 0 || type > 4) throw WireError("unknown frame type " + std::to_string(type));
    f.type = static_cast<WireType>(type);
    f.flags = j.at("flags").get<std::uint8_t>();
    f.unit_id = j.at("unit").get<std::uint16_t>();
    f.k = j.at("k").get<std::uint32_t>();
    f.payload = j.at("payload").get<std::vector<double>>();
    const std::uint32_t want = j.at("crc").get<std::uint32_t>();
    const std::vector<std::uint8_t> bytes = encode_frame(f);
    if (get_u32(bytes.data() + bytes.size() - 4) != want)
      throw WireError("frame checksum mismatch");
  } catch (const nlohmann::json::exception& e) {
    throw WireError(std::string("bad JSON frame: ") + e.what());
  }
  return f;
}

TcpListener::TcpListener(const std::string& host, std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw WireError(std::string("socket failed: ") + std::strerror(errno));
  const int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw WireError("bad listen address: " + host);
  }
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    const std::string msg = std::strerror(errno);
    ::close(fd_);
    throw WireError("bind to " + host + ":" + std::to_string(port) + " failed: " + msg);
  }
  if (::listen(fd_, 32) != 0) {
    const std::string msg = std::strerror(errno);
    ::close(fd_);
    throw WireError("listen failed: " + msg);
  }
  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len) != 0) {
    const std::string msg = std::strerror(errno);
    ::close(fd_);
    throw WireError("getsockname failed: " + msg);
  }
  port_ = ntohs(bound.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

int TcpListener::accept_fd() {
  for (;;) {
    const int fd = ::accept(fd_, nullptr, nullptr);
    if (fd >= 0) return fd;
    if (errno == EINTR) continue;
    throw WireError(std::string("accept failed: ") + std::strerror(errno));
  }
}

int tcp_connect(const std::string& host, std::uint16_t port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw WireError(std::string("socket failed: ") + std::strerror(errno));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw WireError("bad connect address: " + host);
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    const std::string msg = std::strerror(errno);
    ::close(fd);
    throw WireError("connect to " + host + ":" + std::to_string(port) + " failed: " + msg);
  }
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return fd;
}

FrameSocket::FrameSocket(int fd, bool json_transport) : fd_(fd), json_(json_transport) {
  if (fd_ < 0) throw WireError("FrameSocket on invalid descriptor");
  const int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

FrameSocket::~FrameSocket() {
  if (fd_ >= 0) ::close(fd_);
}

FrameSocket::FrameSocket(FrameSocket&& other) noexcept
    : fd_(other.fd_), json_(other.json_), buf_(std::move(other.buf_)) {
  other.fd_ = -1;
}

void FrameSocket::send(const WireFrame& f) {
  if (json_) {
    std::string line = frame_to_json_line(f);
    line.push_back('\n');
    write_all(fd_, reinterpret_cast<const std::uint8_t*>(line.data()), line.size());
    return;
  }
  const std::vector<std::uint8_t> body = encode_frame(f);
  std::vector<std::uint8_t> out;
  out.reserve(4 + body.size());
  put_u32(out, static_cast<std::uint32_t>(body.size()));
  out.insert(out.end(), body.begin(), body.end());
  write_all(fd_, out.data(), out.size());
}

bool FrameSocket::recv(WireFrame* f) {
  if (json_) {
    for (;;) {
      for (std::size_t i = 0; i < buf_.size(); ++i) {
        if (buf_[i] != '\n') continue;
        const std::string line(buf_.begin(), buf_.begin() + static_cast<long>(i));
        buf_.erase(buf_.begin(), buf_.begin() + static_cast<long>(i) + 1);
        *f = frame_from_json_line(line);
        return true;
      }
      std::uint8_t chunk[4096];
      const ssize_t r = ::read(fd_, chunk, sizeof(chunk));
      if (r < 0) {
        if (errno == EINTR) continue;
        throw WireError(std::string("socket read failed: ") + std::strerror(errno));
      }
      if (r == 0) {
        if (buf_.empty()) return false;
        throw WireError("connection closed mid-frame");
      }
      buf_.insert(buf_.end(), chunk, chunk + r);
    }
  }
  std::uint8_t len_bytes[4];
  if (!read_exact(fd_, len_bytes, 4, true)) return false;
  const std::uint32_t len = get_u32(len_bytes);
  if (len < kHeaderBytes + 4 || len > kHeaderBytes + 8 * kMaxPayload + 4)
    throw WireError("implausible frame length " + std::to_string(len));
  std::vector<std::uint8_t> body(len);
  read_exact(fd_, body.data(), len, false);
  *f = decode_frame(body.data(), body.size());
  return true;
}

void FrameSocket::shutdown() noexcept {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

}  // namespace mgd
