#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "ksteer/error.hpp"
#include "ksteer/exchange.hpp"
#include "ksteer/rng.hpp"

using namespace ksteer;

namespace {

ActivationMatrix random_matrix(SeededRng& rng, std::size_t rows, std::size_t cols) {
    ActivationMatrix a(rows, cols);
    for (auto& v : a.values()) v = static_cast<float>(rng.gaussian());
    return a;
}

Intervention steer_intervention(std::size_t d) {
    SteeringSpec spec;
    spec.loss.targets = {1};
    spec.alpha = 0.5f;
    spec.layers = {0};
    return Intervention(spec, std::make_shared<MlpClassifier>(MlpClassifier::initialized(d, 3, 4)), nullptr);
}

std::size_t protocol_offset(std::string_view line) {
    try {
        (void)exchange_decode(line);
    } catch (const ProtocolError& e) {
        return e.offset();
    }
    FAIL("expected ProtocolError");
    return 0;
}

}  // namespace

TEST_CASE("exchange frame encoding") {
    SeededRng rng(3);
    ExchangeFrame f{7, 2, random_matrix(rng, 3, 5)};
    const auto line = exchange_encode(f);
    CHECK(line.find('\n') == std::string::npos);
    auto doc = nlohmann::json::parse(line);
    CHECK(doc["id"] == 7);
    CHECK(doc["layer"] == 2);
    CHECK(doc["shape"] == nlohmann::json::array({3, 5}));
    CHECK(exchange_decode(line) == f);

    ExchangeFrame one{0, 0, ActivationMatrix(1, 1, std::vector<float>{1.0f})};
    CHECK(exchange_encode(one) == R"({"id":0,"layer":0,"shape":[1,1],"data_b64":"AACAPw=="})");
}

TEST_CASE("exchange decode errors carry offsets") {
    CHECK(protocol_offset("[1]") == 0);
    CHECK(protocol_offset(R"({"id":1,"layer":0,"shape":[1,1],"data_b64":"AACAPw==")") > 0);
    const std::string bad_shape = R"({"id":1,"layer":0,"shape":[1],"data_b64":"AACAPw=="})";
    CHECK(protocol_offset(bad_shape) == bad_shape.find("[1]"));
    const std::string zero = R"({"id":1,"layer":0,"shape":[0,1],"data_b64":"AACAPw=="})";
    CHECK(protocol_offset(zero) == zero.find("[0,1]"));
    const std::string bad_char = R"({"id":1,"layer":0,"shape":[1,1],"data_b64":"AAC$Pw=="})";
    CHECK(protocol_offset(bad_char) == bad_char.find('$'));
    const std::string short_payload = R"({"id":1,"layer":0,"shape":[2,1],"data_b64":"AACAPw=="})";
    CHECK(protocol_offset(short_payload) == short_payload.find("\"AAC"));
    const std::string missing = R"({"id":1,"layer":0,"shape":[1,1]})";
    CHECK(protocol_offset(missing) == missing.size());
    CHECK(protocol_offset(R"({"id":-1,"layer":0,"shape":[1,1],"data_b64":"AACAPw=="})") == 6);
    CHECK(protocol_offset(R"({"id":1,"layer":0,"shape":[1,1],"data_b64":""})") > 0);

    auto err = nlohmann::json::parse(exchange_error_frame(std::nullopt, "boom"));
    CHECK(err["id"].is_null());
    CHECK(err["error"] == "boom");
    CHECK(nlohmann::json::parse(exchange_error_frame(4, "x"))["id"] == 4);
}

TEST_CASE("exchange session") {
    const auto iv = steer_intervention(6);
    ExchangeSession session(iv, 6);
    SeededRng rng(9);
    auto a = random_matrix(rng, 2, 6);

    auto reply = exchange_decode(session.handle(exchange_encode({1, 3, a})));
    InterventionNotes notes;
    CHECK(reply.id == 1);
    CHECK(reply.layer == 3);
    CHECK(reply.activations == iv.apply(a, notes));

    auto stale = nlohmann::json::parse(session.handle(exchange_encode({1, 3, a})));
    CHECK(stale["id"] == 1);
    CHECK(stale.contains("error"));
    auto wide = nlohmann::json::parse(session.handle(exchange_encode({5, 0, random_matrix(rng, 1, 7)})));
    CHECK(wide["id"] == 5);
    CHECK(wide.contains("error"));
    auto junk = nlohmann::json::parse(session.handle("not json"));
    CHECK(junk["id"].is_null());
    CHECK(exchange_decode(session.handle(exchange_encode({6, 0, a}))).id == 6);
    CHECK(session.handled() == 2);
    CHECK(session.rejected() == 3);
}

TEST_CASE("exchange over streams") {
    const auto iv = steer_intervention(4);
    SeededRng rng(1);
    std::stringstream in, out;
    std::vector<ActivationMatrix> sent;
    for (std::uint64_t id = 1; id <= 20; ++id) {
        sent.push_back(random_matrix(rng, 1 + id % 3, 4));
        in << exchange_encode({id, 0, sent.back()}) << '\n';
    }
    serve_exchange(in, out, iv, 4);
    std::string line;
    std::uint64_t id = 0;
    InterventionNotes notes;
    while (std::getline(out, line)) {
        auto f = exchange_decode(line);
        CHECK(f.id == id + 1);
        CHECK(f.activations == iv.apply(sent[id], notes));
        ++id;
    }
    CHECK(id == 20);
}

TEST_CASE("exchange over TCP") {
    const auto iv = steer_intervention(4);
    const auto port = static_cast<std::uint16_t>(20000 + ::getpid() % 20000);
    std::thread server([&] { serve_exchange_tcp("127.0.0.1", port, iv, 4, 1); });

    int fd = -1;
    for (int attempt = 0; attempt < 200 && fd < 0; ++attempt) {
        fd = ::socket(AF_INET, SOCK_STREAM, 0);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(port);
        ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
        if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
            ::close(fd);
            fd = -1;
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
    }
    REQUIRE(fd >= 0);
    SeededRng rng(5);
    auto a = random_matrix(rng, 3, 4);
    const auto request = exchange_encode({11, 1, a}) + "\nnot json\n";
    REQUIRE(::write(fd, request.data(), request.size()) == static_cast<ssize_t>(request.size()));
    ::shutdown(fd, SHUT_WR);
    std::string received;
    char buf[4096];
    for (ssize_t n; (n = ::read(fd, buf, sizeof buf)) > 0;) received.append(buf, static_cast<std::size_t>(n));
    ::close(fd);
    server.join();

    std::istringstream lines(received);
    std::string first, second;
    std::getline(lines, first);
    std::getline(lines, second);
    InterventionNotes notes;
    CHECK(exchange_decode(first).activations == iv.apply(a, notes));
    CHECK(nlohmann::json::parse(second).contains("error"));
}
