package com.example.ctor;

public class Point {
    private final int x;
    private final int y;

    public Point() {
        this(0, 0);
    }

    public Point(int x, int y) {
        this.x = x;
        this.y = y;
    }

    protected Point(Point other) {
        this(other.x, other.y);
    }

    public int x() { return x; }
}
