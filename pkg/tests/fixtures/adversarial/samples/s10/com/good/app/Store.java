package com.good.app;

import java.security.MessageDigest;
import javax.crypto.Cipher;

public class Store {
    public void f() throws Exception {
        MessageDigest d = MessageDigest.getInstance("SHA-512");
        Cipher c = Cipher.getInstance("RC4");
    }
}
