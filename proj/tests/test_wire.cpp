#include "guardian/error.hpp"
#include "guardian/wire.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sys/socket.h>
#include <unistd.h>

using namespace grd;
using namespace grd::wire;

TEST(Wire, FrameLayoutIsLittleEndian) {
    const std::vector<std::uint8_t> payload{0xaa, 0xbb, 0xcc};
    const auto bytes = encode_frame(0x0102, payload);
    const std::vector<std::uint8_t> want{3, 0, 0, 0, 0x02, 0x01, 0xaa, 0xbb, 0xcc};
    EXPECT_EQ(bytes, want);
}

TEST(Wire, WriterReaderRoundTrip) {
    Writer w;
    w.u8(7).u16(0xbeef).u32(0xdeadbeef).u64(0x0123456789abcdefULL).str("kernel");
    const auto data = w.take();
    ASSERT_EQ(data.size(), 1u + 2 + 4 + 8 + 4 + 6);
    EXPECT_EQ(data[3], 0xefu);
    Reader r(data);
    EXPECT_EQ(r.u8(), 7u);
    EXPECT_EQ(r.u16(), 0xbeefu);
    EXPECT_EQ(r.u32(), 0xdeadbeefu);
    EXPECT_EQ(r.u64(), 0x0123456789abcdefULL);
    EXPECT_EQ(r.str(), "kernel");
    EXPECT_TRUE(r.done());
    EXPECT_THROW(r.u8(), Error);
}

TEST(Wire, ShortPayloadThrows) {
    const std::vector<std::uint8_t> data{1, 2, 3};
    Reader r(data);
    EXPECT_THROW(r.u32(), Error);
    Reader s(data);
    s.u8();
    EXPECT_THROW(s.expect_done(), Error);
    Writer w;
    w.u32(100).bytes(data);
    Reader t(w.data());
    EXPECT_THROW(t.str(), Error);
}

TEST(Wire, LaunchRoundTrip) {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        LaunchRequest req;
        req.name = "k" + std::to_string(rng() % 1000);
        req.grid = static_cast<std::uint32_t>(rng());
        req.block = static_cast<std::uint32_t>(rng());
        for (unsigned a = 0; a < rng() % 6; ++a) req.args.push_back({static_cast<ArgKind>(rng() % 4), rng()});
        const auto back = decode_launch(encode_launch(req));
        EXPECT_EQ(back.name, req.name);
        EXPECT_EQ(back.grid, req.grid);
        EXPECT_EQ(back.block, req.block);
        EXPECT_EQ(back.args, req.args);
    }
    auto bad = encode_launch({"k", 1, 1, {ArgValue::u64(1)}});
    bad[bad.size() - 9] = 9; // argument kind
    EXPECT_THROW(decode_launch(bad), Error);
    bad = encode_launch({"k", 1, 1, {}});
    bad.push_back(0);
    EXPECT_THROW(decode_launch(bad), Error);
}

TEST(Wire, OutcomesRoundTrip) {
    const std::vector<TaskOutcome> in{{0, Status::ok, ""}, {3, Status::task_failed, "StepLimitExceeded: x"}};
    EXPECT_EQ(decode_outcomes(encode_outcomes(in)), in);
}

TEST(Wire, StatusNames) {
    for (std::uint16_t s = 0; s <= 12; ++s) {
        const auto name = status_name(static_cast<Status>(s));
        EXPECT_EQ(status_from_name(name), static_cast<Status>(s)) << name;
    }
    EXPECT_STREQ(status_name(Status::oob_transfer), "OOB_TRANSFER");
    EXPECT_FALSE(status_from_name("NOPE"));
}

TEST(Wire, SocketFraming) {
    int fds[2];
    ASSERT_EQ(::socketpair(AF_UNIX, SOCK_STREAM, 0, fds), 0);
    const std::vector<std::uint8_t> payload(100000, 0x5a);
    write_frame(fds[0], 4, payload);
    write_frame(fds[0], 9, {});
    auto f = read_frame(fds[1]);
    ASSERT_TRUE(f);
    EXPECT_EQ(f->code, 4u);
    EXPECT_EQ(f->payload, payload);
    f = read_frame(fds[1]);
    ASSERT_TRUE(f);
    EXPECT_EQ(f->code, 9u);
    EXPECT_TRUE(f->payload.empty());

    // truncated frame, then EOF
    const std::vector<std::uint8_t> partial{10, 0, 0, 0, 1, 0, 1, 2};
    ASSERT_EQ(::write(fds[0], partial.data(), partial.size()), static_cast<ssize_t>(partial.size()));
    ::close(fds[0]);
    EXPECT_THROW(read_frame(fds[1]), Error);
    EXPECT_FALSE(read_frame(fds[1]));
    ::close(fds[1]);
}

TEST(Wire, OversizedLengthRejected) {
    int fds[2];
    ASSERT_EQ(::socketpair(AF_UNIX, SOCK_STREAM, 0, fds), 0);
    const std::vector<std::uint8_t> header{0xff, 0xff, 0xff, 0xff, 1, 0};
    ASSERT_EQ(::write(fds[0], header.data(), header.size()), 6);
    EXPECT_THROW(read_frame(fds[1]), Error);
    ::close(fds[0]);
    ::close(fds[1]);
}
