package com.example.thr;

import java.io.IOException;
import java.io.InputStream;

public class Io {
    public byte[] readAll(InputStream in, int... sizes) throws IOException, InterruptedException {
        return new byte[0];
    }

    public synchronized void close() throws IOException {
    }

    protected static <T extends Exception> void sneaky(Throwable t) throws T {
        throw (T) t;
    }
}
