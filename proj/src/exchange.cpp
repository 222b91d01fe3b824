#include "ksteer/exchange.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <thread>
#include <vector>

#include "json.hpp"
#include "ksteer/base64.hpp"
#include "ksteer/error.hpp"

namespace ksteer {

namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "exchange frames are little-endian f32");

// Offset of the value that follows "key": in the raw line, for error reports.
std::size_t value_offset(std::string_view line, std::string_view key) {
    const std::string quoted = "\"" + std::string(key) + "\"";
    const auto at = line.find(quoted);
    if (at == std::string_view::npos) return line.size();
    auto pos = line.find(':', at + quoted.size());
    if (pos == std::string_view::npos) return at;
    ++pos;
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
    return pos;
}

std::uint64_t read_unsigned(const json& doc, std::string_view line, const char* key,
                            std::uint64_t max) {
    const auto it = doc.find(key);
    if (it == doc.end()) throw ProtocolError(std::string("missing field \"") + key + "\"", line.size());
    if (!it->is_number_unsigned() || it->get<std::uint64_t>() > max) {
        throw ProtocolError(std::string("field \"") + key + "\" must be an unsigned integer",
                            value_offset(line, key));
    }
    return it->get<std::uint64_t>();
}

}  // namespace

std::string exchange_encode(const ExchangeFrame& frame) {
    const auto& a = frame.activations;
    const auto* raw = reinterpret_cast<const std::uint8_t*>(a.data());
    // Key order is fixed so output bytes are deterministic.
    std::string out = "{\"id\":" + std::to_string(frame.id) +
                      ",\"layer\":" + std::to_string(frame.layer) + ",\"shape\":[" +
                      std::to_string(a.rows()) + "," + std::to_string(a.cols()) +
                      "],\"data_b64\":\"";
    out += base64::encode({raw, a.size() * sizeof(float)});
    out += "\"}";
    return out;
}

ExchangeFrame exchange_decode(std::string_view line) {
    json doc;
    try {
        doc = json::parse(line.begin(), line.end());
    } catch (const json::parse_error& e) {
        throw ProtocolError(std::string("malformed JSON: ") + e.what(),
                            e.byte > 0 ? e.byte - 1 : 0);
    }
    if (!doc.is_object()) throw ProtocolError("frame must be a JSON object", 0);

    ExchangeFrame frame;
    frame.id = read_unsigned(doc, line, "id", UINT64_MAX);
    frame.layer = static_cast<std::uint32_t>(read_unsigned(doc, line, "layer", UINT32_MAX));

    const auto shape = doc.find("shape");
    if (shape == doc.end()) throw ProtocolError("missing field \"shape\"", line.size());
    if (!shape->is_array() || shape->size() != 2 || !(*shape)[0].is_number_unsigned() ||
        !(*shape)[1].is_number_unsigned()) {
        throw ProtocolError("\"shape\" must be [rows, cols]", value_offset(line, "shape"));
    }
    const auto rows = (*shape)[0].get<std::uint64_t>();
    const auto cols = (*shape)[1].get<std::uint64_t>();
    if (rows == 0 || cols == 0) {
        throw ProtocolError("\"shape\" entries must be positive", value_offset(line, "shape"));
    }

    const auto data = doc.find("data_b64");
    if (data == doc.end()) throw ProtocolError("missing field \"data_b64\"", line.size());
    const std::size_t data_at = value_offset(line, "data_b64");
    if (!data->is_string()) throw ProtocolError("\"data_b64\" must be a string", data_at);
    const auto& text = data->get_ref<const std::string&>();
    if (text.empty()) throw ProtocolError("empty payload", data_at);

    base64::DecodeError err;
    const auto bytes = base64::decode(text, &err);
    // +1 skips the opening quote of the string value.
    if (!err.message.empty()) throw ProtocolError(err.message, data_at + 1 + err.offset);
    if (rows > bytes.size() || cols > bytes.size() ||
        bytes.size() != rows * cols * sizeof(float)) {
        throw ProtocolError("payload holds " + std::to_string(bytes.size()) +
                                " bytes but shape needs " +
                                std::to_string(rows * cols * sizeof(float)),
                            data_at);
    }
    std::vector<float> values(rows * cols);
    std::memcpy(values.data(), bytes.data(), bytes.size());
    frame.activations = ActivationMatrix(rows, cols, std::move(values));
    return frame;
}

std::string exchange_error_frame(std::optional<std::uint64_t> id, std::string_view message) {
    json doc;
    doc["id"] = id ? json(*id) : json(nullptr);
    doc["error"] = std::string(message);
    return doc.dump();
}

ExchangeSession::ExchangeSession(const Intervention& intervention, std::size_t d_model)
    : intervention_(intervention), d_model_(d_model) {}

std::string ExchangeSession::handle(std::string_view line) {
    ExchangeFrame frame;
    try {
        frame = exchange_decode(line);
    } catch (const ProtocolError& e) {
        ++rejected_;
        return exchange_error_frame(std::nullopt, e.what());
    }
    if (last_id_ && frame.id <= *last_id_) {
        ++rejected_;
        return exchange_error_frame(frame.id, "frame id " + std::to_string(frame.id) +
                                                  " is not greater than previous id " +
                                                  std::to_string(*last_id_));
    }
    last_id_ = frame.id;
    if (frame.activations.cols() != d_model_) {
        ++rejected_;
        return exchange_error_frame(frame.id, "frame has " +
                                                  std::to_string(frame.activations.cols()) +
                                                  " columns, classifier expects " +
                                                  std::to_string(d_model_));
    }
    try {
        InterventionNotes notes;
        frame.activations = intervention_.apply(frame.activations, notes);
    } catch (const Error& e) {
        ++rejected_;
        return exchange_error_frame(frame.id, e.what());
    }
    ++handled_;
    return exchange_encode(frame);
}

void serve_exchange(std::istream& in, std::ostream& out, const Intervention& intervention,
                    std::size_t d_model) {
    ExchangeSession session(intervention, d_model);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        out << session.handle(line) << '\n';
        out.flush();
    }
}

namespace {

void serve_socket(int fd, const Intervention& intervention, std::size_t d_model) {
    ExchangeSession session(intervention, d_model);
    std::string buffer;
    char chunk[65536];
    auto send_all = [fd](const std::string& s) {
        std::size_t sent = 0;
        while (sent < s.size()) {
            const auto n = ::send(fd, s.data() + sent, s.size() - sent, MSG_NOSIGNAL);
            if (n <= 0) return false;
            sent += static_cast<std::size_t>(n);
        }
        return true;
    };
    for (;;) {
        const auto n = ::recv(fd, chunk, sizeof(chunk), 0);
        if (n <= 0) break;
        buffer.append(chunk, static_cast<std::size_t>(n));
        std::size_t start = 0;
        for (auto nl = buffer.find('\n'); nl != std::string::npos; nl = buffer.find('\n', start)) {
            std::string_view line(buffer.data() + start, nl - start);
            start = nl + 1;
            if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
            if (line.empty()) continue;
            if (!send_all(session.handle(line) + "\n")) {
                ::close(fd);
                return;
            }
        }
        buffer.erase(0, start);
    }
    ::close(fd);
}

}  // namespace

void serve_exchange_tcp(const std::string& host, std::uint16_t port,
                        const Intervention& intervention, std::size_t d_model,
                        std::size_t max_sessions) {
    const int listener = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listener < 0) throw Error("socket() failed");
    const int yes = 1;
    ::setsockopt(listener, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(listener);
        throw InvalidInput("not an IPv4 address: " + host);
    }
    if (::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
        ::listen(listener, 16) != 0) {
        ::close(listener);
        throw Error("cannot listen on " + host + ":" + std::to_string(port));
    }
    std::vector<std::jthread> sessions;
    for (std::size_t accepted = 0; max_sessions == 0 || accepted < max_sessions; ++accepted) {
        const int fd = ::accept(listener, nullptr, nullptr);
        if (fd < 0) continue;
        sessions.emplace_back(serve_socket, fd, std::cref(intervention), d_model);
    }
    sessions.clear();
    ::close(listener);
}

}  // namespace ksteer
