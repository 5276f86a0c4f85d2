// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>
#include <string>
#include <vector>

#include "shardgrad/transport.hpp"

using namespace shardgrad;

TEST_CASE("frame layout is pinned byte for byte") {
    Message m;
    m.tag = Tag::InitData;
    m.layer = 1;
    m.sender = 2;
    m.payload = {1.0};
    const auto bytes = encode_frame(m);
    REQUIRE(bytes.size() == frame_size(1));
    const std::vector<std::uint8_t> expected = {
        0x00, 0x00, 0x00, 0x01, // element count, big endian
        0x00,                   // tag
        0x00, 0x01,             // layer, big endian
        0x00, 0x02,             // sender, big endian
        0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0xF0, 0x3F, // 1.0, little endian
    };
    REQUIRE(bytes == expected);
    const Message back = decode_frame(bytes);
    REQUIRE(back.tag == m.tag);
    REQUIRE(back.layer == m.layer);
    REQUIRE(back.sender == m.sender);
    REQUIRE(back.payload == m.payload);
}

TEST_CASE("frame decoding rejects malformed input") {
    Message m;
    m.tag = Tag::GradPush;
    m.payload = {2.5, -1.0};
    auto bytes = encode_frame(m);
    REQUIRE_THROWS_AS(decode_frame(bytes.data(), 5), FormatError);
    auto bad_tag = bytes;
    bad_tag[4] = 0xEE;
    REQUIRE_THROWS_AS(decode_frame(bad_tag), FormatError);
    auto truncated = bytes;
    truncated.pop_back();
    REQUIRE_THROWS_AS(decode_frame(truncated), FormatError);
}

TEST_CASE("frame size is header plus eight bytes per element") {
    REQUIRE(frame_size(0) == 9);
    REQUIRE(frame_size(240) == 9 + 8 * 240);
}

TEST_CASE("each sender-receiver pair is a fifo") {
    FabricOptions fo;
    fo.deterministic = true;
    Fabric fab(2, fo);
    std::vector<double> seen;
    fab.run({[&] {
                 for (double v : {1.0, 2.0, 3.0}) {
                     Message m;
                     m.tag = Tag::GradPush;
                     m.payload = {v};
                     fab.send(0, 1, std::move(m));
                 }
             },
             [&] {
                 for (int i = 0; i < 3; ++i) seen.push_back(fab.recv(1, 0).payload[0]);
             }});
    REQUIRE(seen == std::vector<double>{1.0, 2.0, 3.0});
}

TEST_CASE("deterministic scheduling replays the same interleaving") {
    auto run_once = [](std::uint64_t seed) {
        FabricOptions fo;
        fo.deterministic = true;
        fo.seed = seed;
        Fabric fab(3, fo);
        std::vector<double> log;
        fab.run({[&] {
                     for (int i = 0; i < 4; ++i) {
                         const Message a = fab.recv(0, 1);
                         log.push_back(a.payload[0]);
                         const Message b = fab.recv(0, 2);
                         log.push_back(b.payload[0]);
                     }
                 },
                 [&] {
                     for (int i = 0; i < 4; ++i) {
                         Message m;
                         m.tag = Tag::PartialError;
                         m.payload = {10.0 + i};
                         fab.send(1, 0, std::move(m));
                     }
                 },
                 [&] {
                     for (int i = 0; i < 4; ++i) {
                         Message m;
                         m.tag = Tag::PartialError;
                         m.payload = {20.0 + i};
                         fab.send(2, 0, std::move(m));
                     }
                 }});
        return log;
    };
    REQUIRE(run_once(5) == run_once(5));
    // Message totals are scheduling independent.
    REQUIRE(run_once(5).size() == 8);
}

TEST_CASE("deadlock is detected and names the blocked endpoints") {
    FabricOptions fo;
    fo.deterministic = true;
    Fabric fab(2, fo);
    try {
        fab.run({[&] { fab.recv(0, 1); }, [&] { fab.recv(1, 0); }});
        FAIL("expected a transport error");
    } catch (const TransportError& e) {
        const std::string what = e.what();
        REQUIRE(what.find("deadlock") != std::string::npos);
        REQUIRE(what.find("0") != std::string::npos);
        REQUIRE(what.find("1") != std::string::npos);
    }
}

TEST_CASE("threaded receive times out with both endpoints named") {
    FabricOptions fo;
    fo.deterministic = false;
    fo.timeout = std::chrono::milliseconds(50);
    Fabric fab(2, fo);
    try {
        fab.run({[&] { fab.recv(0, 1); }, [&] {}});
        FAIL("expected a transport error");
    } catch (const TransportError& e) {
        const std::string what = e.what();
        REQUIRE(what.find("0") != std::string::npos);
        REQUIRE(what.find("1") != std::string::npos);
    }
}

TEST_CASE("broadcast fans out once per non-root endpoint") {
    FabricOptions fo;
    fo.deterministic = true;
    Fabric fab(4, fo);
    Message m;
    m.tag = Tag::ActivationBroadcast;
    m.payload = Vector(10, 1.5);
    fab.run({[&] { broadcast_from(fab, 0, {0, 1, 2, 3}, m); },
             [&] { REQUIRE(fab.recv(1, 0).payload.size() == 10); },
             [&] { REQUIRE(fab.recv(2, 0).payload.size() == 10); },
             [&] { REQUIRE(fab.recv(3, 0).payload.size() == 10); }});
    const MessageStats st = fab.stats();
    REQUIRE(st.messages == 3);
    REQUIRE(st.data_units == 30);
}

TEST_CASE("gather orders contributions by ascending sender") {
    FabricOptions fo;
    fo.deterministic = true;
    fo.seed = 99; // scheduler order must not matter
    Fabric fab(4, fo);
    std::vector<std::uint16_t> senders;
    auto worker = [&](std::size_t self) {
        return [&fab, self] {
            Message m;
            m.tag = Tag::PartialError;
            m.payload = {double(self) * 100.0};
            fab.send(self, 0, std::move(m));
        };
    };
    fab.run({[&] {
                 const auto got = gather_to(fab, 0, {3, 1, 2});
                 for (const Message& m : got) senders.push_back(m.sender);
             },
             worker(1), worker(2), worker(3)});
    REQUIRE(senders == std::vector<std::uint16_t>{1, 2, 3});
}

TEST_CASE("gather reports which senders never arrived") {
    FabricOptions fo;
    fo.deterministic = false;
    fo.timeout = std::chrono::milliseconds(50);
    Fabric fab(3, fo);
    std::string err;
    fab.run({[&] {
                 try {
                     gather_to(fab, 0, {1, 2});
                 } catch (const TransportError& e) {
                     err = e.what();
                 }
             },
             [&] {
                 Message m;
                 m.tag = Tag::PartialError;
                 fab.send(1, 0, std::move(m));
             },
             [&] {}});
    REQUIRE(err.find("2") != std::string::npos);
    REQUIRE(err.find("missing") != std::string::npos);
}

TEST_CASE("hypercube allgather on two endpoints moves two messages") {
    FabricOptions fo;
    fo.deterministic = true;
    Fabric fab(2, fo);
    Vector full0, full1;
    fab.run({[&] { full0 = allgather_hypercube(fab, 0, {0, 1}, {240, 240}, Vector(240, 1.0),
                                               Tag::ActivationBroadcast, 1); },
             [&] { full1 = allgather_hypercube(fab, 1, {0, 1}, {240, 240}, Vector(240, 2.0),
                                               Tag::ActivationBroadcast, 1); }});
    REQUIRE(full0 == full1);
    REQUIRE(full0.size() == 480);
    REQUIRE(full0[0] == 1.0);
    REQUIRE(full0[240] == 2.0);
    const MessageStats st = fab.stats();
    REQUIRE(st.messages == 2);
    REQUIRE(st.data_units == 480);
}

TEST_CASE("hypercube allgather on four endpoints moves eight messages") {
    FabricOptions fo;
    fo.deterministic = true;
    Fabric fab(4, fo);
    // Uneven chunks: 10 columns over 4 endpoints split (3,3,2,2).
    const std::vector<std::size_t> sizes = {3, 3, 2, 2};
    std::vector<Vector> got(4);
    std::vector<std::function<void()>> tasks;
    for (std::size_t r = 0; r < 4; ++r)
        tasks.push_back([&, r] {
            Vector own(sizes[r], double(r + 1));
            got[r] = allgather_hypercube(fab, r, {0, 1, 2, 3}, sizes, std::move(own),
                                         Tag::ActivationBroadcast, 2);
        });
    fab.run(std::move(tasks));
    const Vector expect = {1, 1, 1, 2, 2, 2, 3, 3, 4, 4};
    for (const auto& v : got) REQUIRE(v == expect);
    REQUIRE(fab.stats().messages == 8);
}

TEST_CASE("hypercube allgather requires a power-of-two group") {
    FabricOptions fo;
    fo.deterministic = true;
    Fabric fab(3, fo);
    std::string err;
    fab.run({[&] {
                 try {
                     allgather_hypercube(fab, 0, {0, 1, 2}, {1, 1, 1}, Vector{1.0},
                                         Tag::ActivationBroadcast, 1);
                 } catch (const TopologyError& e) {
                     err = e.what();
                 }
             },
             [&] {}, [&] {}});
    REQUIRE_FALSE(err.empty());
}

TEST_CASE("message counters bucket by tag") {
    FabricOptions fo;
    fo.deterministic = true;
    Fabric fab(2, fo);
    fab.run({[&] {
                 Message a;
                 a.tag = Tag::InitData;
                 a.payload = {1, 2, 3};
                 fab.send(0, 1, std::move(a));
                 Message b;
                 b.tag = Tag::ErrorBroadcast;
                 b.payload = {4};
                 fab.send(0, 1, std::move(b));
             },
             [&] {
                 fab.recv(1, 0);
                 fab.recv(1, 0);
             }});
    const MessageStats st = fab.stats();
    REQUIRE(st.messages == 2);
    REQUIRE(st.data_units == 4);
    REQUIRE(st.messages_of(Tag::InitData) == 1);
    REQUIRE(st.units_of(Tag::InitData) == 3);
    REQUIRE(st.messages_of(Tag::ErrorBroadcast) == 1);
    REQUIRE(st.units_of(Tag::ErrorBroadcast) == 1);
    REQUIRE(st.messages_of(Tag::GradPush) == 0);
}
